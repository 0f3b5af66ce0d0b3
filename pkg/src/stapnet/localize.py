"""Coordinate transforms, label encoding, the cell-midpoint localizer and
localization error metrics.

Cartesian frame: platform at the origin, x points North, y East, z up.
Azimuth is measured from North toward East, elevation from the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SCORE_INF = float("inf")


@dataclass(frozen=True)
class CartesianPoint:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, a) -> "CartesianPoint":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class EncodedLabel:
    values: tuple

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def sph_to_cart(r, theta_deg, phi_deg) -> CartesianPoint:
    if r < 0:
        raise ValueError(f"range must be nonnegative, got {r}")
    x, y, z = sph_to_cart_array(r, theta_deg, phi_deg)
    return CartesianPoint(float(x), float(y), float(z))


def sph_to_cart_array(r, theta_deg, phi_deg):
    """Vectorized :func:`sph_to_cart`; returns a tuple ``(x, y, z)`` of arrays."""
    th = np.deg2rad(theta_deg)
    ph = np.deg2rad(phi_deg)
    r = np.asarray(r, dtype=float)
    return r * np.cos(ph) * np.cos(th), r * np.cos(ph) * np.sin(th), r * np.sin(ph)


def _critical(lo, hi, candidates):
    return [c for c in candidates if lo < c < hi]


def bounding_box(scenario) -> tuple[np.ndarray, np.ndarray]:
    """Cartesian bounding box of the scenario's constrained area.

    Each coordinate is a product of monotone factors away from the cardinal
    angles, so extremes sit on the box corners or at a crossed cardinal angle.
    """
    cfg = scenario.config
    dr = cfg.resolution[0]
    rs = [cfg.range_bounds[0] - dr / 2, cfg.range_bounds[1] + dr / 2]
    ths = list(cfg.azimuth_bounds) + _critical(*cfg.azimuth_bounds, [-180, -90, 0, 90, 180, 270])
    phs = list(cfg.elevation_bounds) + _critical(*cfg.elevation_bounds, [-90, 0, 90])
    R, T, P = np.meshgrid(rs, ths, phs, indexing="ij")
    pts = np.stack(sph_to_cart_array(R.ravel(), T.ravel(), P.ravel()), axis=1)
    return pts.min(axis=0), pts.max(axis=0)


def encode_label(p: CartesianPoint, scenario, tol: float = 1e-9) -> EncodedLabel:
    lo, hi = bounding_box(scenario)
    v = p.as_array()
    for axis, name in enumerate("xyz"):
        if v[axis] < lo[axis] - tol or v[axis] > hi[axis] + tol:
            raise ValueError(
                f"{name} = {v[axis]:.6f} m lies outside the constrained box "
                f"[{lo[axis]:.6f}, {hi[axis]:.6f}]"
            )
    e = 2.0 * (v - lo) / (hi - lo) - 1.0
    return EncodedLabel(tuple(float(c) for c in np.clip(e, -1.0, 1.0)))


def decode_array(e, scenario) -> np.ndarray:
    """Decode an ``(..., 3)`` array of encoded labels into Cartesian meters."""
    lo, hi = bounding_box(scenario)
    e = np.asarray(e, dtype=float)
    return lo + (e + 1.0) * (hi - lo) / 2.0


def decode_label(e: EncodedLabel, scenario) -> CartesianPoint:
    v = e.as_array()
    if not np.all(np.isfinite(v)):
        raise ValueError("encoded label must be finite")
    return CartesianPoint.from_array(decode_array(v, scenario))


def peak_cell(values: np.ndarray) -> tuple[int, int, int]:
    # np.argmax returns the first maximum in C order, which is exactly the
    # (range, then azimuth, then elevation) tie-break.
    flat = int(np.argmax(values))
    return tuple(int(i) for i in np.unravel_index(flat, values.shape))


def peak_cell_midpoint(tensor, scenario) -> CartesianPoint:
    values = tensor.values if hasattr(tensor, "values") else np.asarray(tensor)
    ri, ti, pi = peak_cell(values)
    return sph_to_cart(
        scenario.bin_midpoints[ri], scenario.azimuth_grid[ti], scenario.elevation_grid[pi]
    )


def avg_euclidean_error(preds: Sequence, truths: Sequence) -> float:
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(truths)} truths")
    if len(preds) == 0:
        raise ValueError("need at least one prediction")
    P = np.array([p.as_array() if isinstance(p, CartesianPoint) else p for p in preds], float)
    T = np.array([t.as_array() if isinstance(t, CartesianPoint) else t for t in truths], float)
    return float(np.mean(np.linalg.norm(P - T, axis=1)))


def gain(err_namf: float, err_cnn: float) -> float:
    """Error ratio baseline/network; above 1 means the network localizes better."""
    if err_namf < 0 or err_cnn < 0:
        raise ValueError("errors must be nonnegative")
    if err_cnn == 0:
        return SCORE_INF
    return err_namf / err_cnn


def quantization_floor(r_mid, dr, dtheta, dphi, n=100_000, seed=0) -> float:
    """Mean distance from a uniform point in one grid cell to the cell midpoint."""
    rng = np.random.default_rng(seed)
    theta0, phi0 = 25.0, -4.0
    r = r_mid + rng.uniform(-dr / 2, dr / 2, n)
    th = theta0 + rng.uniform(-dtheta / 2, dtheta / 2, n)
    ph = phi0 + rng.uniform(-dphi / 2, dphi / 2, n)
    pts = np.stack(sph_to_cart_array(r, th, ph), axis=1)
    c = np.array(sph_to_cart_array(r_mid, theta0, phi0))
    return float(np.mean(np.linalg.norm(pts - c, axis=1)))
