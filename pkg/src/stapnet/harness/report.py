"""CSV tables, per-scenario SVG plots and the summary file of an experiment."""

from __future__ import annotations

import csv
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.stats import spearmanr  # noqa: E402

from ..errors import StapnetError  # noqa: E402
from ..subspace import PairwiseChordal  # noqa: E402
from .experiment import ErrorRow, ExperimentReport  # noqa: E402

ERROR_COLUMNS = ["scenario", "scnr_db", "err_namf_m", "err_cnn_m", "err_cnn_fsl_m", "gain", "gain_fsl"]
CHORDAL_COLUMNS = ["scenario", "distance_raw", "distance_normalized", "gain_at_top_scnr"]
SERIES = (("baseline", "err_namf_m", "cell midpoint"), ("cnn", "err_cnn_m", "CNN"), ("cnn-fsl", "err_cnn_fsl_m", "CNN + FSL"))


class ReportIOError(StapnetError, OSError):
    exit_code = 4


def _num(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def plot_scenario(rows, scenario: str, path: Path) -> None:
    """AED versus SCNR with one tagged line per method."""
    rows = sorted((r for r in rows if r.scenario == scenario), key=lambda r: r.scnr_db)
    x = [r.scnr_db for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for gid, attr, label in SERIES:
        (line,) = ax.plot(x, [getattr(r, attr) for r in rows], marker="o", label=label)
        line.set_gid(f"series-{gid}")
    ax.set_yscale("log")
    ax.set_xlabel("mean output SCNR (dB)")
    ax.set_ylabel("average Euclidean error (m)")
    ax.set_title(f"scenario {scenario}")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    with plt.rc_context({"svg.hashsalt": "stapnet", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def summary_text(report: ExperimentReport) -> str:
    top = report.top_scnr_db
    lines = [f"top_scnr_db = {top:g}"]
    lines.append("spearman_chordal_vs_gain = " + ("nan" if report.spearman is None else f"{report.spearman:.6f}"))
    at_top = [r for r in report.rows if r.scnr_db == top]
    displaced = [r for r in at_top if r.scenario != "O"]
    if displaced:
        better = sum(r.gain_fsl > r.gain for r in displaced)
        lines.append(f"fsl_improved = {better} of {len(displaced)}")
        ratios = [r.gain_fsl / r.gain for r in displaced if r.gain > 0]
        lines.append(f"fsl_gain_ratio_mean = {np.mean(ratios):.4f}")
    for r in at_top:
        if r.scenario == "O":
            lines.append(f"matched_gain = {r.gain:.4f}")
            lines.append(f"matched_gain_after_fsl = {r.gain_fsl:.4f}")
    for c in report.chordal:
        lines.append(f"chordal[{c.tag}] = {c.distance:.6f} (normalized {c.normalized:.6f})")
    return "\n".join(lines) + "\n"


def emit_report(report: ExperimentReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"{out} is not writable")
        written = []
        p = out / "errors.csv"
        _write_csv(p, ERROR_COLUMNS, [
            [r.scenario, _num(r.scnr_db), _num(r.err_namf_m), _num(r.err_cnn_m), _num(r.err_cnn_fsl_m), _num(r.gain), _num(r.gain_fsl)]
            for r in report.rows
        ])
        written.append(p)
        gains = report.gains_at_top()
        p = out / "chordal.csv"
        _write_csv(p, CHORDAL_COLUMNS, [
            [c.tag, _num(c.distance), _num(c.normalized), _num(gains[c.tag])] for c in report.chordal
        ])
        written.append(p)
        seen = []
        for r in report.rows:
            if r.scenario not in seen:
                seen.append(r.scenario)
        for tag in seen:
            p = out / f"aed_{tag}.svg"
            plot_scenario(report.rows, tag, p)
            written.append(p)
        p = out / "summary.txt"
        p.write_text(summary_text(report), encoding="utf-8")
        written.append(p)
    except OSError as e:
        raise ReportIOError(f"cannot write report to {out}: {e}") from e
    return written


def read_report(out_dir) -> ExperimentReport:
    """Rebuild a report from the CSV tables in ``out_dir``."""
    out = Path(out_dir)
    try:
        with open(out / "errors.csv", newline="", encoding="utf-8") as f:
            rd = csv.DictReader(f)
            if rd.fieldnames != ERROR_COLUMNS:
                raise ReportIOError(f"errors.csv has columns {rd.fieldnames}")
            rows = [
                ErrorRow(d["scenario"], *(float(d[c]) for c in ERROR_COLUMNS[1:]))
                for d in rd
            ]
        chordal = []
        cpath = out / "chordal.csv"
        if cpath.exists():
            with open(cpath, newline="", encoding="utf-8") as f:
                rd = csv.DictReader(f)
                if rd.fieldnames != CHORDAL_COLUMNS:
                    raise ReportIOError(f"chordal.csv has columns {rd.fieldnames}")
                chordal = [
                    PairwiseChordal(d["scenario"], float(d["distance_raw"]), float(d["distance_normalized"]), ())
                    for d in rd
                ]
    except (OSError, KeyError, ValueError) as e:
        if isinstance(e, ReportIOError):
            raise
        raise ReportIOError(f"cannot read report from {out}: {e}") from e
    if not rows:
        raise ReportIOError(f"errors.csv in {out} has no rows")
    top = max(r.scnr_db for r in rows)
    rho = None
    if len(chordal) >= 2:
        g = {r.scenario: r.gain for r in rows if r.scnr_db == top}
        rho = float(spearmanr([c.distance for c in chordal], [g[c.tag] for c in chordal]).statistic)
        if np.isnan(rho):
            rho = None
    return ExperimentReport(rows, chordal, rho, top)
