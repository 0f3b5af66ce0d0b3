"""Acceptance criteria, each run at its stated size and tolerance.

Every test records one PASS/FAIL line; the lines are printed together in the
terminal summary. Criteria 5, 6, 7 and 9 share one full default-config run.
"""

import math
import time

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from stapnet import neural, stap
from stapnet.harness import config as cfgmod
from stapnet.harness.cli import main
from stapnet.harness.experiment import run_experiment
from stapnet.harness.report import emit_report
from stapnet.subspace import SubspaceBasis, chordal_distance

LINES: list[str] = []


def record(number, ok, detail):
    LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def cnormal(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def orthonormal(rng, L, r):
    q, _ = np.linalg.qr(cnormal(rng, (L, r)))
    return q


def basis(u):
    return SubspaceBasis(u, u.shape[1], np.ones(u.shape[0]))


def test_1_namf_properties():
    rng = np.random.default_rng(101)
    L, K, n = 16, 100, 10_000
    t0 = time.perf_counter()
    lo, hi, matched, scale = np.inf, -np.inf, 0.0, 0.0
    for _ in range(n):
        Y = cnormal(rng, (L, K))
        a = cnormal(rng, L)
        g = stap.namf_statistic(Y, a)
        lo, hi = min(lo, g), max(hi, g)
        alpha, beta = cnormal(rng, 2) * rng.uniform(0.1, 10, 2)
        g2 = stap.namf_statistic(alpha * Y, beta * a)
        scale = max(scale, abs(g2 - g) / g)
        m = stap.namf_statistic((alpha * a)[:, None], beta * a)
        matched = max(matched, abs(m - 1.0))
    dt = time.perf_counter() - t0
    ok = lo >= 0 and hi <= math.sqrt(K) and matched <= 1e-9 and scale <= 1e-10 and dt < 10
    record(1, ok, f"range [{lo:.3g}, {hi:.3g}] <= {math.sqrt(K):g}, matched err {matched:.1e}, "
                  f"scale err {scale:.1e}, {dt:.1f} s")
    assert ok


def test_2_whitening():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        L = 16
        # random eigenvectors, condition numbers spread over 1 .. 1e6
        Q = orthonormal(rng, L, L)
        w = 10.0 ** rng.uniform(0, rng.uniform(0, 6), L)
        sigma = (Q * w) @ Q.conj().T
        W = stap.covariance_from_matrix(sigma).inv_sqrt
        worst = max(worst, np.linalg.norm(W @ sigma @ W - np.eye(L)))
    dt = time.perf_counter() - t0
    ok = worst < 1e-8 and dt < 5
    record(2, ok, f"max Frobenius error {worst:.1e}, {dt:.2f} s")
    assert ok


def test_3_chordal_oracle():
    rng = np.random.default_rng(303)
    L = 16
    t0 = time.perf_counter()
    worst = worst_orth = worst_same = 0.0
    for _ in range(1000):
        r = int(rng.integers(1, 9))
        U, V = orthonormal(rng, L, r), orthonormal(rng, L, r)
        got = chordal_distance(basis(U), basis(V), r).distance
        oracle = float(np.sum(np.sin(subspace_angles(U, V)) ** 2))
        worst = max(worst, abs(got - oracle))
        Q = orthonormal(rng, L, 2 * r)
        worst_orth = max(worst_orth, abs(chordal_distance(basis(Q[:, :r]), basis(Q[:, r:]), r).distance - r))
        R = orthonormal(rng, r, r)
        worst_same = max(worst_same, abs(chordal_distance(basis(U), basis(U @ R), r).distance))
    dt = time.perf_counter() - t0
    ok = worst < 1e-8 and worst_orth < 1e-8 and worst_same < 1e-8 and dt < 10
    record(3, ok, f"oracle err {worst:.1e}, orthogonal err {worst_orth:.1e}, identical err {worst_same:.1e}, {dt:.2f} s")
    assert ok


def test_4_gradient_exactness():
    t0 = time.perf_counter()
    model = neural.default_architecture(seed=4)
    x = np.random.default_rng(404).standard_normal((4,) + model.input_dims)
    res = neural.layerwise_gradient_check(model, x)
    dt = time.perf_counter() - t0
    worst = max(err for err, _, _ in res.values())
    checked = min(n for _, n, _ in res.values())
    layers = {k[0] for k in res}
    ok = worst < 1e-4 and checked > 0 and len(layers) == len(model.layers) and dt < 60
    record(4, ok, f"{len(layers)} layers, {len(res)} tensors, max rel err {worst:.1e}, {dt:.1f} s")
    assert ok


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    cfg = cfgmod.load_config()
    t0 = time.perf_counter()
    report = run_experiment(cfg)
    emit_report(report, out)
    return report, time.perf_counter() - t0, cfg


def test_5_matched_gain(full_run):
    report, _, cfg = full_run
    top = max(cfg.scnr_db)
    row = report.row("O", top)
    tag = f"{top:g}dB"
    dt = sum(report.timings[f"{s}@{tag}"] for s in ("calibrate", "generate", "train", "evaluate"))
    ok = row.gain > 1.0 and dt < 20 * 60
    record(5, ok, f"matched gain {row.gain:.3f} at {top:g} dB (NAMF {row.err_namf_m:.1f} m, "
                  f"CNN {row.err_cnn_m:.1f} m), {dt / 60:.1f} min")
    assert ok


def test_6_chordal_predicts_gain(full_run):
    report, dt, _ = full_run
    rho = report.spearman
    ok = rho is not None and rho <= -0.6 and dt < 45 * 60
    g = report.gains_at_top()
    pairs = ", ".join(f"{c.tag} {c.distance:.3f}/{g[c.tag]:.2f}" for c in report.chordal)
    record(6, ok, f"spearman {rho:.3f} over {len(report.chordal)} displacements "
                  f"(distance/gain: {pairs}), full run {dt / 60:.1f} min")
    assert ok


def test_7_fsl_improves(full_run):
    report, _, _ = full_run
    top = report.top_scnr_db
    displaced = [r for r in report.rows if r.scnr_db == top and r.scenario != "O"]
    improved = sum(r.gain_fsl > r.gain for r in displaced)
    matched = [r for r in report.rows if r.scenario == "O"]
    worst = max(r.err_cnn_fsl_m / r.err_cnn_m - 1 for r in matched)
    ratio = np.mean([r.gain_fsl / r.gain for r in displaced])
    ok = improved >= 7 and worst <= 0.10
    record(7, ok, f"improved {improved}/{len(displaced)}, worst matched degradation {100 * worst:+.1f}%, "
                  f"mean FSL gain ratio {ratio:.2f}")
    assert ok


DETERMINISM = [
    "--experiment.scnr_db=-10,20",
    "--experiment.train_count=256",
    "--experiment.test_count=64",
    "--experiment.fsl_count=16",
    "--experiment.calibration_count=64",
    "--train.epochs=2",
    "--fsl.epochs=3",
]


def test_8_determinism(tmp_path):
    t0 = time.perf_counter()
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run-experiment", "--out", str(a), "--seed", "8"] + DETERMINISM) == 0
    assert main(["run-experiment", "--out", str(b), "--seed", "8"] + DETERMINISM) == 0
    same = {n: (a / n).read_bytes() == (b / n).read_bytes() for n in ("errors.csv", "chordal.csv")}
    dt = time.perf_counter() - t0
    ok = all(same.values())
    record(8, ok, f"byte-identical {same}, reduced config, {dt:.0f} s")
    assert ok


def test_9_degradation_shape(full_run):
    report, _, cfg = full_run
    lo, hi = min(cfg.scnr_db), max(cfg.scnr_db)
    worst = None
    fails = []
    for tag in ["O"] + list(cfg.directions):
        a, b = report.row(tag, lo), report.row(tag, hi)
        for name in ("err_namf_m", "err_cnn_m", "err_cnn_fsl_m"):
            ratio = getattr(a, name) / getattr(b, name)
            if worst is None or ratio < worst[0]:
                worst = (ratio, tag, name)
            if ratio < 3:
                fails.append(f"{tag}/{name}")
    ok = not fails
    record(9, ok, f"min AED ratio {worst[0]:.2f} ({worst[1]}, {worst[2]}); below 3x: {fails or 'none'}")
    assert ok
