"""Clutter subspaces and the chordal-distance perturbation measure."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np

from .stap import CovarianceEstimate, scenario_covariances


@dataclass(frozen=True)
class FixedRank:
    r: int


@dataclass(frozen=True)
class EnergyRank:
    epsilon: float


@dataclass(frozen=True)
class NoiseFloorRank:
    tau: float = 10.0


RankRule = Union[FixedRank, EnergyRank, NoiseFloorRank]


def parse_rank_rule(text: str) -> RankRule:
    """Parse ``fixed:4``, ``energy:0.05`` or ``noise_floor:10``."""
    kind, _, arg = text.partition(":")
    kind = kind.strip().lower().replace("-", "_")
    if kind == "fixed":
        return FixedRank(int(arg))
    if kind == "energy":
        return EnergyRank(float(arg))
    if kind in ("noise_floor", "noise"):
        return NoiseFloorRank(float(arg) if arg else 10.0)
    raise ValueError(f"unknown rank rule {text!r}")


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    basis: np.ndarray  # (L, r)
    rank: int
    singular_values: np.ndarray  # all L, descending


@dataclass(frozen=True)
class ChordalResult:
    distance: float
    rank_used: int
    trace_term: float
    principal_angles: np.ndarray


def noise_floor(eigenvalues: np.ndarray) -> float:
    """Median of the trailing quartile of a descending eigenvalue list."""
    L = len(eigenvalues)
    q = max(1, int(np.ceil(L / 4)))
    floor = float(np.median(eigenvalues[L - q:]))
    return max(floor, 1e-12 * float(eigenvalues[0]))


def select_rank(eigenvalues: np.ndarray, rule: RankRule) -> int:
    L = len(eigenvalues)
    if isinstance(rule, FixedRank):
        if rule.r > L or rule.r < 0:
            raise ValueError(f"requested rank {rule.r} outside 0..{L}")
        return rule.r
    floor = noise_floor(eigenvalues)
    if isinstance(rule, NoiseFloorRank):
        return int(np.sum(eigenvalues > rule.tau * floor))
    if isinstance(rule, EnergyRank):
        excess = np.maximum(eigenvalues - floor, 0.0)
        total = excess.sum()
        if total <= 0:
            return 0
        return int(np.searchsorted(np.cumsum(excess), (1 - rule.epsilon) * total - 1e-12 * total) + 1)
    raise TypeError(f"unsupported rank rule {rule!r}")


def clutter_basis(cov: Union[CovarianceEstimate, np.ndarray], rank_rule: RankRule = NoiseFloorRank()) -> SubspaceBasis:
    """Leading eigenvectors of a clutter-plus-noise covariance.

    For a Hermitian PSD matrix the singular vectors are the eigenvectors, so
    ``eigh`` sorted by descending eigenvalue stands in for the SVD.
    """
    sigma = cov.sigma if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=complex)
    sigma = 0.5 * (sigma + sigma.conj().T)
    w, V = np.linalg.eigh(sigma)
    w, V = np.maximum(w[::-1], 0.0), V[:, ::-1]
    r = select_rank(w, rank_rule)
    return SubspaceBasis(np.ascontiguousarray(V[:, :r]), r, w)


def chordal_distance(origin: SubspaceBasis, displaced: SubspaceBasis, r: int) -> ChordalResult:
    """``r - Tr(J_D J_O J_D)`` with ``J`` the projectors onto the leading ``r`` columns."""
    if r < 1:
        raise ValueError("r must be at least 1")
    if origin.basis.shape[1] < r or displaced.basis.shape[1] < r:
        raise ValueError(
            f"bases have {origin.basis.shape[1]} and {displaced.basis.shape[1]} columns, need {r}"
        )
    Uo = origin.basis[:, :r]
    Ud = displaced.basis[:, :r]
    Jo = Uo @ Uo.conj().T
    Jd = Ud @ Ud.conj().T
    tr = np.trace(Jd @ Jo @ Jd)
    scale = max(1.0, abs(tr))
    if abs(tr.imag) > 1e-10 * scale:
        raise ArithmeticError(f"trace has imaginary residue {tr.imag:.3e}")
    s = np.linalg.svd(Uo.conj().T @ Ud, compute_uv=False)
    angles = np.sort(np.arccos(np.clip(s, 0.0, 1.0)))
    return ChordalResult(float(r - tr.real), r, float(tr.real), angles)


class PairwiseChordal(NamedTuple):
    tag: str
    distance: float
    normalized: float
    per_bin: tuple


def pairwise_chordal(
    scenarios: Sequence,
    bin_policy: str = "mean",
    rank_rule: RankRule = NoiseFloorRank(),
    covariances: Sequence[Sequence[CovarianceEstimate]] = None,
) -> list[PairwiseChordal]:
    """Chordal distance of every displaced scenario to ``scenarios[0]``.

    Per bin, the rank comes from the original scenario and is reused for the
    displaced one. Bins whose original clutter rank is zero contribute 0.
    ``bin_policy`` is ``"mean"`` (average over bins) or ``"center"``.
    """
    if len(scenarios) < 2:
        raise ValueError("need the original scenario and at least one displaced one")
    if bin_policy not in ("mean", "center"):
        raise ValueError(f"unknown bin policy {bin_policy!r}")
    covs = list(covariances) if covariances is not None else [scenario_covariances(s) for s in scenarios]
    origin = [clutter_basis(c, rank_rule) for c in covs[0]]
    nb = len(origin)
    bins = range(nb) if bin_policy == "mean" else [nb // 2]
    out = []
    for s, cv in zip(scenarios[1:], covs[1:]):
        raw, norm, per = [], [], []
        for i in bins:
            r = origin[i].rank
            if r == 0:
                raw.append(0.0)
                norm.append(0.0)
                per.append(0.0)
                continue
            d = chordal_distance(origin[i], clutter_basis(cv[i], FixedRank(r)), r).distance
            raw.append(d)
            norm.append(d / r)
            per.append(d)
        out.append(PairwiseChordal(s.scenario_id, float(np.mean(raw)), float(np.mean(norm)), tuple(per)))
    return out
