"""Command-line entry point.

Every subcommand accepts the global flags ``--config --seed --out --threads``
and any number of ``--section.key=value`` overrides.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import localize, neural, subspace
from ..errors import ConfigError, StapnetError
from ..scene import TAGS, build_scenario, displaced_family
from . import config as cfgmod
from .dataset import ScenarioContext, generate_dataset, load_dataset, save_dataset, to_arrays
from .experiment import build_family, run_experiment
from .report import emit_report, read_report, summary_text

log = logging.getLogger("stapnet")


class _ArgError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError("arguments", message)


def _globals(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="config file")
    p.add_argument("--seed", type=int, default=d, help="master seed (overrides experiment.seed)")
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--threads", type=int, default=d, help="worker threads for dataset generation")
    p.add_argument("-v", "--verbose", action="store_true", default=d)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stapnet", description="STAP heatmap localization experiments")
    _globals(p, False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    _globals(common, True)

    sub.add_parser("gen-scenario", parents=[common], help="build the scenario family and describe it")
    g = sub.add_parser("gen-dataset", parents=[common], help="simulate a heatmap dataset")
    g.add_argument("--scenario", default="O", help="scenario tag (O, N, NW, ...)")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--scnr", type=float, default=None, help="target mean output SCNR (dB); omit to keep the RCS as configured")
    g.add_argument("--path", default=None, help="output file (default <out>/dataset_<tag>.bin)")
    sub.add_parser("chordal", parents=[common], help="chordal distances to the original scenario")
    t = sub.add_parser("train", parents=[common], help="train a CNN on a dataset file")
    t.add_argument("--data", required=True)
    t.add_argument("--model", default=None, help="checkpoint path (default <out>/model.bin)")
    f = sub.add_parser("fsl", parents=[common], help="few-shot fine-tuning of a checkpoint")
    f.add_argument("--model", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--output", default=None, help="checkpoint path (default <out>/model_fsl.bin)")
    e = sub.add_parser("eval", parents=[common], help="AED of a checkpoint and of the cell-midpoint baseline")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--scenario", default="O")
    sub.add_parser("run-experiment", parents=[common], help="full protocol with report")
    sub.add_parser("report", parents=[common], help="re-render plots and summary from CSVs in --out")
    return p


def _scenario(cfg, tag):
    tag = tag.upper()
    if tag not in TAGS:
        raise ConfigError("scenario", f"unknown scenario tag {tag!r}")
    original = build_scenario(cfg.scenario)
    if tag == "O":
        return original
    return displaced_family(original, cfg.displacement, (tag,))[1]


def _out(args) -> Path:
    p = Path(args.out or ".")
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_gen_scenario(cfg, args):
    info = []
    for s in build_family(cfg):
        lo, hi = localize.bounding_box(s)
        info.append({
            "tag": s.scenario_id,
            "platform": [float(v) for v in s.platform],
            "range_bounds": list(s.config.range_bounds),
            "azimuth_bounds": list(s.config.azimuth_bounds),
            "elevation_bounds": list(s.config.elevation_bounds),
            "num_bins": s.config.num_bins,
            "grid_shape": list(s.grid_shape),
            "num_patches": int(len(s.patch_positions)),
            "box_min": lo.tolist(),
            "box_max": hi.tolist(),
        })
    path = _out(args) / "scenarios.json"
    path.write_text(json.dumps(info, indent=2) + "\n")
    print(f"wrote {path} ({len(info)} scenarios)")


def cmd_gen_dataset(cfg, args):
    s = _scenario(cfg, args.scenario)
    if args.count < 1:
        raise ConfigError("count", "must be at least 1")
    ctx = ScenarioContext.build(s, cfg.shared_covariance)
    tensors = generate_dataset(s, args.count, args.scnr, cfg.seed, ctx, cfg.calibration_count, args.threads or 1)
    path = Path(args.path) if args.path else _out(args) / f"dataset_{s.scenario_id}.bin"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(path, tensors, s)
    mean = float(np.mean([t.mean_output_scnr_db for t in tensors]))
    print(f"wrote {path}: {len(tensors)} examples, mean output SCNR {mean:.2f} dB")


def cmd_chordal(cfg, args):
    family = build_family(cfg)
    if len(family) < 2:
        raise ConfigError("experiment.directions", "need at least one displacement")
    res = subspace.pairwise_chordal(family, cfg.bin_policy, cfg.rank_rule)
    path = _out(args) / "chordal_distances.csv"
    lines = ["scenario,distance_raw,distance_normalized"]
    lines += [f"{c.tag},{c.distance!r},{c.normalized!r}" for c in res]
    path.write_text("\n".join(lines) + "\n")
    for c in res:
        print(f"{c.tag:>3} {c.distance:.4f} {c.normalized:.4f}")


def _arrays(path):
    ex = load_dataset(path)
    if not ex:
        raise ConfigError("data", f"{path} holds no examples")
    return ex, *to_arrays(ex, None)


def cmd_train(cfg, args):
    _, X, E, _ = _arrays(args.data)
    model = neural.default_architecture(X.shape[1:], seed=cfg.train.rng_seed)
    model, hist = neural.train(model, (X, E), cfg.train)
    path = Path(args.model) if args.model else _out(args) / "model.bin"
    path.parent.mkdir(parents=True, exist_ok=True)
    neural.save_checkpoint(model, path)
    print(f"wrote {path}; loss by epoch: " + " ".join(f"{h:.5f}" for h in hist))


def cmd_fsl(cfg, args):
    model = neural.load_checkpoint(args.model)
    _, X, E, _ = _arrays(args.data)
    tuned = neural.freeze_and_finetune(model, (X, E), cfg.fsl)
    path = Path(args.output) if args.output else _out(args) / "model_fsl.bin"
    path.parent.mkdir(parents=True, exist_ok=True)
    neural.save_checkpoint(tuned, path)
    print(f"wrote {path}")


def cmd_eval(cfg, args):
    s = _scenario(cfg, args.scenario)
    model = neural.load_checkpoint(args.model)
    ex, X, _, truth = _arrays(args.data)
    pred = localize.decode_array(neural.predict(model, X), s)
    base = np.array([localize.peak_cell_midpoint(t.values, s).as_array() for t in ex])
    e_cnn = localize.avg_euclidean_error(pred, truth)
    e_base = localize.avg_euclidean_error(base, truth)
    print(f"scenario {s.scenario_id}: err_namf_m {e_base:.3f} err_cnn_m {e_cnn:.3f} gain {localize.gain(e_base, e_cnn):.4f}")


def cmd_run_experiment(cfg, args):
    report = run_experiment(cfg, threads=args.threads or 1)
    files = emit_report(report, _out(args))
    for k, v in report.timings.items():
        log.info("timing %s %.1f s", k, v)
    sys.stdout.write(summary_text(report))
    print("wrote " + ", ".join(p.name for p in files))


def cmd_report(cfg, args):
    out = Path(args.out or ".")
    report = read_report(out)
    files = emit_report(report, out)
    sys.stdout.write(summary_text(report))
    print("wrote " + ", ".join(p.name for p in files))


COMMANDS = {
    "gen-scenario": cmd_gen_scenario,
    "gen-dataset": cmd_gen_dataset,
    "chordal": cmd_chordal,
    "train": cmd_train,
    "fsl": cmd_fsl,
    "eval": cmd_eval,
    "run-experiment": cmd_run_experiment,
    "report": cmd_report,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, rest = build_parser().parse_known_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads", "must be at least 1")
        cfg = cfgmod.load_config(args.config, rest, args.seed)
        COMMANDS[args.command](cfg, args)
    except StapnetError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code if e.exit_code in (2, 3, 4) else 1
    except ArithmeticError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
