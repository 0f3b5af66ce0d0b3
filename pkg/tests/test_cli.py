import subprocess
import sys

import pytest

from stapnet.harness.cli import main

TINY = [
    "--experiment.scnr_db=0,20",
    "--experiment.directions=N,E",
    "--experiment.train_count=24",
    "--experiment.test_count=8",
    "--experiment.fsl_count=4",
    "--experiment.calibration_count=32",
    "--train.epochs=1",
    "--fsl.epochs=1",
]


def test_pipeline_subcommands(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["gen-scenario", "--out", out, "--experiment.directions=N"]) == 0
    assert (tmp_path / "scenarios.json").exists()
    assert main(["gen-dataset", "--out", out, "--count", "16", "--scnr", "20", "--seed", "1"]) == 0
    assert main(["gen-dataset", "--out", out, "--scenario", "e", "--count", "4", "--scnr", "20"]) == 0
    assert main(["train", "--out", out, "--data", f"{out}/dataset_O.bin", "--train.epochs=1"]) == 0
    assert (tmp_path / "model.bin").read_bytes()[:8] == b"STAPCNN1"
    assert main(["fsl", "--out", out, "--model", f"{out}/model.bin", "--data", f"{out}/dataset_E.bin", "--fsl.epochs=1"]) == 0
    capsys.readouterr()
    assert main(["eval", "--out", out, "--model", f"{out}/model_fsl.bin", "--data", f"{out}/dataset_E.bin", "--scenario", "E"]) == 0
    assert "err_cnn_m" in capsys.readouterr().out
    assert main(["chordal", "--out", out, "--experiment.directions=N,S"]) == 0
    assert (tmp_path / "chordal_distances.csv").read_text().count("\n") == 3


def test_run_experiment_and_report(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run-experiment", "--out", str(a), "--seed", "5"] + TINY) == 0
    assert main(["--seed", "5", "run-experiment", "--out", str(b)] + TINY) == 0
    for name in ("errors.csv", "chordal.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert len((a / "errors.csv").read_text().splitlines()) == 1 + 2 * 3
    before = (a / "summary.txt").read_text()
    (a / "summary.txt").unlink()
    assert main(["report", "--out", str(a)]) == 0
    assert (a / "summary.txt").read_text() == before


def test_config_file(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\ndirections = N\n")
    assert main(["gen-scenario", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "scenarios.json").read_text().count('"tag"') == 2


@pytest.mark.parametrize(
    "argv, code",
    [
        (["gen-scenario", "--train.bogus=1"], 2),
        (["gen-scenario", "--config", "/nonexistent.ini"], 2),
        (["nonsense"], 2),
        (["gen-dataset", "--count", "2", "--scenario", "X"], 2),
        (["gen-dataset", "--count", "2", "--scenario.noise_power=0", "--clutter.density=0"], 3),
        (["eval", "--model", "/nonexistent.bin", "--data", "/nonexistent.bin"], 4),
        (["report", "--out", "/nonexistent_dir_xyz"], 4),
    ],
)
def test_exit_codes(argv, code, tmp_path):
    assert main(argv + ["--out", str(tmp_path)] if "--out" not in argv else argv) == code


def test_bad_checkpoint_exit_code(tmp_path):
    bad = tmp_path / "m.bin"
    bad.write_bytes(b"garbage!")
    data = tmp_path / "d.bin"
    assert main(["gen-dataset", "--out", str(tmp_path), "--count", "2", "--path", str(data)]) == 0
    assert main(["eval", "--model", str(bad), "--data", str(data)]) == 4


def test_module_entry_point(tmp_path):
    r = subprocess.run(
        [sys.executable, "-m", "stapnet", "gen-scenario", "--out", str(tmp_path), "--train.nope=1"],
        capture_output=True, text=True,
    )
    assert r.returncode == 2
    assert "train.nope" in r.stderr
