"""End-to-end protocol: train on the original platform position, test on
displaced ones, fine-tune with a few examples, correlate with chordal distance."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import spearmanr

from .. import localize, neural, subspace
from ..errors import StageError
from ..scene import Scenario, build_scenario, calibrate_rcs, derive_seed, displaced_family, with_rcs_mean
from .config import ExperimentConfig
from .dataset import ScenarioContext, generate_dataset, to_arrays

log = logging.getLogger(__name__)

# stage keys mixed into the master seed
_TRAIN, _TEST, _FSL, _CAL, _INIT = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class ErrorRow:
    scenario: str
    scnr_db: float
    err_namf_m: float
    err_cnn_m: float
    err_cnn_fsl_m: float
    gain: float
    gain_fsl: float


@dataclass
class ExperimentReport:
    rows: list
    chordal: list  # PairwiseChordal per displaced scenario
    spearman: Optional[float]
    top_scnr_db: float
    timings: dict = field(default_factory=dict)
    train_history: dict = field(default_factory=dict)

    def row(self, scenario: str, scnr_db: float) -> ErrorRow:
        for r in self.rows:
            if r.scenario == scenario and r.scnr_db == scnr_db:
                return r
        raise KeyError((scenario, scnr_db))

    def gains_at_top(self) -> dict:
        return {r.scenario: r.gain for r in self.rows if r.scnr_db == self.top_scnr_db}


class _Stage:
    def __init__(self, name, timings):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s", self.name)
        return self

    def __exit__(self, kind, exc, tb):
        self.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, (StageError, KeyboardInterrupt)):
            raise StageError(self.name, exc) from exc
        return False


def build_family(cfg: ExperimentConfig) -> list[Scenario]:
    return displaced_family(build_scenario(cfg.scenario), cfg.displacement, cfg.directions)


def baseline_predictions(tensors, s: Scenario) -> np.ndarray:
    return np.array([localize.peak_cell_midpoint(t, s).as_array() for t in tensors])


def evaluate(model, X, truth, s: Scenario) -> float:
    pred = localize.decode_array(neural.predict(model, X), s)
    return localize.avg_euclidean_error(pred, truth)


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    timings: dict = {}
    with _Stage("scenarios", timings):
        family = build_family(cfg)
        ctxs = [ScenarioContext.build(s, cfg.shared_covariance) for s in family]
    chordal = []
    if len(family) > 1:
        with _Stage("chordal", timings):
            chordal = subspace.pairwise_chordal(
                family, cfg.bin_policy, cfg.rank_rule, [c.covariances for c in ctxs]
            )
    rows = []
    histories = {}
    for j, db in enumerate(cfg.scnr_db):
        tag = f"{db:g}dB"
        with _Stage(f"calibrate@{tag}", timings):
            cal = []
            for k, c in enumerate(ctxs):
                mu = calibrate_rcs(c.scenario, db, cfg.calibration_count, derive_seed(cfg.seed, _CAL, j, k), c.covariances)
                cal.append(ScenarioContext(with_rcs_mean(c.scenario, mu), c.covariances, c.grid))
        with _Stage(f"generate@{tag}", timings):
            train_set = generate_dataset(
                cal[0].scenario, cfg.train_count, None, derive_seed(cfg.seed, _TRAIN, j), cal[0], threads=threads
            )
            tests = [
                generate_dataset(c.scenario, cfg.test_count, None, derive_seed(cfg.seed, _TEST, j, k), c, threads=threads)
                for k, c in enumerate(cal)
            ]
            fsl_sets = [
                generate_dataset(c.scenario, cfg.fsl_count, None, derive_seed(cfg.seed, _FSL, j, k), c, threads=threads)
                for k, c in enumerate(cal)
            ]
        with _Stage(f"train@{tag}", timings):
            X, E, _ = to_arrays(train_set, family[0])
            del train_set
            model = neural.default_architecture(family[0].grid_shape, seed=derive_seed(cfg.seed, _INIT, j) % 2**32)
            model, hist = neural.train(model, (X, E), cfg.train)
            histories[db] = hist
            del X, E
        with _Stage(f"evaluate@{tag}", timings):
            for k, s in enumerate(family):
                Xt, _, truth = to_arrays(tests[k], s)
                err_namf = localize.avg_euclidean_error(baseline_predictions(tests[k], s), truth)
                err_cnn = evaluate(model, Xt, truth, s)
                Xf, Ef, _ = to_arrays(fsl_sets[k], s)
                tuned = neural.freeze_and_finetune(model, (Xf, Ef), cfg.fsl)
                err_fsl = evaluate(tuned, Xt, truth, s)
                rows.append(
                    ErrorRow(
                        s.scenario_id, float(db), err_namf, err_cnn, err_fsl,
                        localize.gain(err_namf, err_cnn), localize.gain(err_namf, err_fsl),
                    )
                )
                log.info("%s %s namf %.1f cnn %.1f fsl %.1f", tag, s.scenario_id, err_namf, err_cnn, err_fsl)
    top = max(cfg.scnr_db)
    rho = None
    if len(chordal) >= 2:
        gains = {r.scenario: r.gain for r in rows if r.scnr_db == top}
        d = [c.distance for c in chordal]
        g = [gains[c.tag] for c in chordal]
        rho = float(spearmanr(d, g).statistic)
        if np.isnan(rho):
            rho = None
    return ExperimentReport(rows, chordal, rho, float(top), timings, histories)
