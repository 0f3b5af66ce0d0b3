"""Seedable synthetic radar scenes.

A scene is a stationary airborne platform looking at a constrained area on
the ground, surrounded by a field of discrete clutter patches laid on a
regular world-frame grid. Each patch carries a mean power drawn from a
spatially correlated log-normal texture. Returns are single-pulse,
matched-filtered per range bin: a patch or target only contributes to the
bin that contains its slant range.

World coordinates are local East-North-Up meters. Platform-relative Cartesian
coordinates (see :mod:`stapnet.localize`) are North-East-Up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import CalibrationError, ConfigError
from .localize import CartesianPoint, sph_to_cart, sph_to_cart_array

SPEED_OF_LIGHT = 299_792_458.0

TAGS = ("O", "N", "NW", "W", "SW", "S", "SE", "E", "NE")

# unit (east, north) directions for the eight displacement tags
DIRECTIONS = {
    "N": (0.0, 1.0),
    "NE": (math.sqrt(0.5), math.sqrt(0.5)),
    "E": (1.0, 0.0),
    "SE": (math.sqrt(0.5), -math.sqrt(0.5)),
    "S": (0.0, -1.0),
    "SW": (-math.sqrt(0.5), -math.sqrt(0.5)),
    "W": (-1.0, 0.0),
    "NW": (-math.sqrt(0.5), math.sqrt(0.5)),
}


def derive_seed(master_seed: int, *keys: int) -> int:
    """Independent 64-bit child seed for ``(master_seed, *keys)``."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circular complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


@dataclass(frozen=True)
class ArrayGeometry:
    num_channels: int = 16
    element_spacing: float = 0.015
    wavelength: float = SPEED_OF_LIGHT / 10e9
    subarray_factor: int = 3

    def __post_init__(self):
        if self.num_channels < 2:
            raise ConfigError("num_channels", "need at least 2 channels")
        if not self.element_spacing > 0:
            raise ConfigError("element_spacing", "must be positive")
        if not self.wavelength > 0:
            raise ConfigError("wavelength", "must be positive")
        if self.subarray_factor < 1:
            raise ConfigError("subarray_factor", "must be at least 1")

    @property
    def channel_spacing(self) -> float:
        return self.subarray_factor * self.element_spacing


@dataclass(frozen=True)
class ClutterConfig:
    """Knobs of the parametric clutter field.

    ``density`` scales the number of patches per unit area; 0 disables clutter.
    A straight coastline with bearing ``coast_bearing`` passes ``coast_offset``
    meters from the anchor; patches on its left (sea) side are ``sea_db``
    weaker than land. ``sea_db = 0`` gives a uniform field.
    """

    cnr_db: float = 30.0
    texture_db: float = 6.0
    correlation_length: float = 150.0
    patch_spacing: float = 10.0
    region_half_width: float = 3000.0
    sector_margin: float = 2.0
    density: float = 1.0
    coast_bearing: float = 0.0
    coast_offset: float = -1500.0
    sea_db: float = 20.0

    def __post_init__(self):
        if self.density < 0:
            raise ConfigError("clutter.density", "must be nonnegative")
        if not self.patch_spacing > 0:
            raise ConfigError("clutter.patch_spacing", "must be positive")
        if not self.region_half_width > 0:
            raise ConfigError("clutter.region_half_width", "must be positive")
        if self.correlation_length < 0:
            raise ConfigError("clutter.correlation_length", "must be nonnegative")
        if self.sector_margin < 0:
            raise ConfigError("clutter.sector_margin", "must be nonnegative")
        if self.sea_db < 0:
            raise ConfigError("clutter.sea_db", "must be nonnegative")


@dataclass(frozen=True)
class ScenarioConfig:
    platform_position: tuple = (0.0, 0.0)
    platform_height: float = 1000.0
    standoff: float = 11538.0
    range_bounds: tuple = (14553.0, 14673.0)
    azimuth_bounds: tuple = (20.0, 30.0)
    elevation_bounds: tuple = (-4.1, -3.9)
    resolution: tuple = (30.0, 0.4, 0.01)
    num_bins: int = 5
    first_bin_index: int = 100
    rcs_mean: float = 1.0
    rcs_range: float = 1.0
    noise_power: float = 1.0
    clutter_seed: int = 0
    num_realizations: int = 100
    clutter: ClutterConfig = field(default_factory=ClutterConfig)

    def __post_init__(self):
        dr, dth, dph = self.resolution
        if min(dr, dth, dph) <= 0:
            raise ConfigError("resolution", "all resolutions must be positive")
        r0, r1 = self.range_bounds
        if not r0 < r1:
            raise ConfigError("range_bounds", f"need r_min < r_max, got {self.range_bounds}")
        if self.num_bins < 1:
            raise ConfigError("num_bins", "need at least one bin")
        # r_min and r_max are the midpoints of the first and last bin
        if not math.isclose((self.num_bins - 1) * dr, r1 - r0, rel_tol=1e-9, abs_tol=1e-6):
            raise ConfigError(
                "num_bins", f"(num_bins - 1) * dr = {(self.num_bins - 1) * dr} != r_max - r_min = {r1 - r0}"
            )
        if not math.isclose(self.standoff + self.first_bin_index * dr + dr / 2, r0, abs_tol=1e-6):
            raise ConfigError("standoff", "standoff + P*dr + dr/2 must equal r_min")
        if not self.azimuth_bounds[0] < self.azimuth_bounds[1]:
            raise ConfigError("azimuth_bounds", "need theta_min < theta_max")
        if not self.elevation_bounds[0] < self.elevation_bounds[1]:
            raise ConfigError("elevation_bounds", "need phi_min < phi_max")
        for name, span, step in (
            ("azimuth_bounds", self.azimuth_bounds[1] - self.azimuth_bounds[0], dth),
            ("elevation_bounds", self.elevation_bounds[1] - self.elevation_bounds[0], dph),
        ):
            if abs(span / step - round(span / step)) > 1e-6:
                raise ConfigError(name, f"span {span} is not a multiple of the grid step {step}")
        if self.rcs_mean < 0:
            raise ConfigError("rcs_mean", "must be nonnegative")
        if self.rcs_range < 0 or self.rcs_range > 2 * self.rcs_mean:
            raise ConfigError("rcs_range", "need 0 <= l <= 2*mu so the RCS stays nonnegative")
        if self.noise_power < 0:
            raise ConfigError("noise_power", "must be nonnegative")
        if self.num_realizations < 1:
            raise ConfigError("num_realizations", "need K >= 1")

    @classmethod
    def for_range(cls, r_min, r_max, dr=30.0, first_bin_index=100, **kw):
        """Config whose bin count and standoff follow from the range bounds."""
        num_bins = int(round((r_max - r_min) / dr)) + 1
        standoff = r_min - dr / 2 - first_bin_index * dr
        res = kw.pop("resolution", (dr, 0.4, 0.01))
        return cls(
            range_bounds=(r_min, r_max),
            num_bins=num_bins,
            first_bin_index=first_bin_index,
            standoff=standoff,
            resolution=(dr, res[1], res[2]),
            **kw,
        )


@dataclass(frozen=True)
class ClutterPatch:
    world_position: tuple
    mean_power: float
    patch_id: int


@dataclass(frozen=True)
class TargetTruth:
    r: float
    theta: float
    phi: float
    bin_index: int
    rcs: float
    cartesian: CartesianPoint


@dataclass
class RangeBinData:
    bin_index: int
    Y: np.ndarray
    X: np.ndarray
    C: np.ndarray
    N: np.ndarray
    Z: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class Scenario:
    config: ScenarioConfig
    geometry: ArrayGeometry
    patch_positions: np.ndarray  # (n, 3) world ENU meters
    patch_powers: np.ndarray  # (n,)
    patch_ids: np.ndarray  # (n,)
    anchor: np.ndarray  # world ENU center of the targeted ground region
    scenario_id: str = "O"

    @property
    def patches(self) -> list[ClutterPatch]:
        return [
            ClutterPatch(tuple(float(c) for c in pos), float(pw), int(i))
            for pos, pw, i in zip(self.patch_positions, self.patch_powers, self.patch_ids)
        ]

    @property
    def platform(self) -> np.ndarray:
        e, n = self.config.platform_position
        return np.array([e, n, self.config.platform_height], dtype=float)

    @property
    def num_bins(self) -> int:
        return self.config.num_bins

    @property
    def boresight(self) -> float:
        return 0.5 * sum(self.config.azimuth_bounds)

    @cached_property
    def bin_indices(self) -> np.ndarray:
        P = self.config.first_bin_index
        return np.arange(P, P + self.config.num_bins)

    @cached_property
    def bin_midpoints(self) -> np.ndarray:
        dr = self.config.resolution[0]
        return self.config.standoff + self.bin_indices * dr + dr / 2

    @cached_property
    def azimuth_grid(self) -> np.ndarray:
        lo, hi = self.config.azimuth_bounds
        n = int(round((hi - lo) / self.config.resolution[1])) + 1
        return np.linspace(lo, hi, n)

    @cached_property
    def elevation_grid(self) -> np.ndarray:
        lo, hi = self.config.elevation_bounds
        n = int(round((hi - lo) / self.config.resolution[2])) + 1
        return np.linspace(lo, hi, n)

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return (self.config.num_bins, len(self.azimuth_grid), len(self.elevation_grid))

    @cached_property
    def patch_geometry(self):
        """Slant range, azimuth and elevation of every patch seen from the platform."""
        d = self.patch_positions - self.platform
        rng = np.linalg.norm(d, axis=1)
        az = np.degrees(np.arctan2(d[:, 0], d[:, 1]))
        el = np.degrees(np.arcsin(np.clip(d[:, 2] / np.maximum(rng, 1e-300), -1, 1)))
        return rng, az, el

    def bin_patches(self, i: int) -> np.ndarray:
        """Indices of the patches that fall in range bin ``i`` and inside the beam sector."""
        rng, az, _ = self.patch_geometry
        dr = self.config.resolution[0]
        mid = self.bin_midpoints[i]
        lo, hi = self.config.azimuth_bounds
        m = self.config.clutter.sector_margin
        # wrap relative azimuth into [-180, 180)
        rel = (az - self.boresight + 180.0) % 360.0 - 180.0
        half = (hi - lo) / 2 + m
        sel = (rng >= mid - dr / 2) & (rng < mid + dr / 2) & (np.abs(rel) <= half)
        return np.flatnonzero(sel)

    def bin_steering(self, i: int) -> np.ndarray:
        idx = self.bin_patches(i)
        _, az, el = self.patch_geometry
        return steering_matrix(self.geometry, self.boresight, az[idx], el[idx])

    @cached_property
    def clutter_covariances(self) -> np.ndarray:
        """Exact per-bin clutter covariance, shape ``(num_bins, L, L)``."""
        L = self.geometry.num_channels
        out = np.zeros((self.num_bins, L, L), dtype=complex)
        for i in range(self.num_bins):
            idx = self.bin_patches(i)
            if idx.size == 0:
                continue
            A = self.bin_steering(i)
            out[i] = (A * self.patch_powers[idx]) @ A.conj().T
        return out

    @cached_property
    def clutter_factors(self) -> np.ndarray:
        """Per-bin square-root factors ``F`` with ``F F^H`` = clutter covariance."""
        out = np.zeros_like(self.clutter_covariances)
        for i, R in enumerate(self.clutter_covariances):
            R = 0.5 * (R + R.conj().T)
            w, V = np.linalg.eigh(R)
            tol = max(w.max(initial=0.0), 0.0) * 1e-13
            w = np.where(w > tol, w, 0.0)
            out[i] = V * np.sqrt(w)
        return out


def steering_matrix(g: ArrayGeometry, boresight: float, theta_deg, phi_deg) -> np.ndarray:
    """Steering vectors as columns, shape ``(L, n)``.

    Channels form a uniform line of beamformed subarrays; each column is
    scaled by the normalized horizontal subarray pattern so that the
    boresight column is all ones.
    """
    th = np.atleast_1d(np.asarray(theta_deg, dtype=float))
    ph = np.atleast_1d(np.asarray(phi_deg, dtype=float))
    th, ph = np.broadcast_arrays(th, ph)
    u = np.sin(np.deg2rad(th - boresight)) * np.cos(np.deg2rad(ph))
    k = 2 * np.pi / g.wavelength
    l = np.arange(g.num_channels)[:, None]
    phase = k * g.channel_spacing * l * u[None, :]
    M = g.subarray_factor
    m = np.arange(M)[:, None]
    sub = np.abs(np.exp(1j * k * g.element_spacing * m * u[None, :]).sum(axis=0)) / M
    return np.exp(1j * phase) * sub[None, :]


def steering_vector(g: ArrayGeometry, s: Scenario, r: float, theta: float, phi: float) -> np.ndarray:
    """Steering vector toward ``(r, theta, phi)``; far field, so ``r`` is unused."""
    if not all(math.isfinite(v) for v in (r, theta, phi)):
        raise ValueError("steering coordinates must be finite")
    return steering_matrix(g, s.boresight, theta, phi)[:, 0]


def _anchor_point(cfg: ScenarioConfig) -> np.ndarray:
    r_c = 0.5 * sum(cfg.range_bounds)
    th_c = 0.5 * sum(cfg.azimuth_bounds)
    ph_c = 0.5 * sum(cfg.elevation_bounds)
    x, y, z = sph_to_cart_array(r_c, th_c, ph_c)
    e, n = cfg.platform_position
    return np.array([e + float(y), n + float(x), cfg.platform_height + float(z)])


def _patch_field(cfg: ScenarioConfig, anchor: np.ndarray):
    cc = cfg.clutter
    if cc.density == 0:
        empty = np.zeros((0, 3))
        return empty, np.zeros(0), np.zeros(0, dtype=np.int64)
    spacing = cc.patch_spacing / math.sqrt(cc.density)
    n = int(math.floor(2 * cc.region_half_width / spacing)) + 1
    offs = (np.arange(n) - (n - 1) / 2) * spacing
    E, N = np.meshgrid(anchor[0] + offs, anchor[1] + offs, indexing="xy")
    pos = np.stack([E.ravel(), N.ravel(), np.zeros(E.size)], axis=1)

    rng = np.random.default_rng(cfg.clutter_seed)
    g = rng.standard_normal((n, n))
    if cc.correlation_length > 0:
        g = gaussian_filter(g, cc.correlation_length / spacing, mode="reflect")
    sd = g.std()
    g = (g - g.mean()) / (sd if sd > 0 else 1.0)
    powers = 10.0 ** (cc.texture_db * g.ravel() / 10.0)
    if cc.sea_db > 0:
        b = math.radians(cc.coast_bearing)
        # unit normal pointing to the land (right-hand) side of the coastline
        normal = np.array([math.cos(b), -math.sin(b)])
        side = (pos[:, :2] - anchor[:2]) @ normal - cc.coast_offset
        powers = np.where(side >= 0, powers, powers * 10.0 ** (-cc.sea_db / 10.0))
    return pos, powers, np.arange(n * n, dtype=np.int64)


def build_scenario(config: ScenarioConfig, geometry: Optional[ArrayGeometry] = None, tag: str = "O") -> Scenario:
    """Lay the clutter field and fix the targeted ground region for ``config``.

    Patch powers are scaled so the mean per-channel clutter power across the
    constrained bins equals ``cnr_db`` above the noise power (or above 1 W
    when the scene is noise-free).
    """
    geometry = geometry or ArrayGeometry()
    if tag not in TAGS:
        raise ConfigError("tag", f"unknown scenario tag {tag!r}; expected one of {TAGS}")
    anchor = _anchor_point(config)
    pos, powers, ids = _patch_field(config, anchor)
    s = Scenario(config, geometry, pos, powers, ids, anchor, tag)
    if powers.size:
        total = np.real(np.trace(s.clutter_covariances, axis1=1, axis2=2)).sum()
        if total > 0:
            ref = config.noise_power if config.noise_power > 0 else 1.0
            want = 10 ** (config.clutter.cnr_db / 10) * ref * geometry.num_channels * config.num_bins
            s = Scenario(config, geometry, pos, powers * (want / total), ids, anchor, tag)
    return s


def _direction_tag(de: float, dn: float) -> str:
    if de == 0 and dn == 0:
        return "O"
    ang = math.degrees(math.atan2(de, dn)) % 360.0
    order = ["N", "NE", "E", "SE", "S", "SW", "W", "NW"]
    return order[int(round(ang / 45.0)) % 8]


def displace_platform(s: Scenario, offset_east: float, offset_north: float, tag: Optional[str] = None) -> Scenario:
    """Move the platform and re-aim the constrained area at the same ground region.

    Range and elevation bounds follow the new line of sight to the anchor;
    azimuth bounds, resolutions and the patch field are kept.
    """
    tag = tag or _direction_tag(offset_east, offset_north)
    cfg = s.config
    if offset_east == 0 and offset_north == 0:
        return Scenario(cfg, s.geometry, s.patch_positions, s.patch_powers, s.patch_ids, s.anchor, tag)
    e, n = cfg.platform_position
    new_pos = (e + offset_east, n + offset_north)
    p = np.array([new_pos[0], new_pos[1], cfg.platform_height])
    d = s.anchor - p
    r_c = float(np.linalg.norm(d))
    ph_c = math.degrees(math.asin(d[2] / r_c))
    r_half = 0.5 * (cfg.range_bounds[1] - cfg.range_bounds[0])
    ph_half = 0.5 * (cfg.elevation_bounds[1] - cfg.elevation_bounds[0])
    dr = cfg.resolution[0]
    r_min = r_c - r_half
    new_cfg = replace(
        cfg,
        platform_position=new_pos,
        range_bounds=(r_min, r_c + r_half),
        elevation_bounds=(ph_c - ph_half, ph_c + ph_half),
        standoff=r_min - dr / 2 - cfg.first_bin_index * dr,
    )
    return Scenario(new_cfg, s.geometry, s.patch_positions, s.patch_powers, s.patch_ids, s.anchor, tag)


def displaced_family(original: Scenario, distance: float = 1000.0, tags=TAGS[1:]) -> list[Scenario]:
    """The original scenario followed by one displacement per direction tag."""
    out = [original]
    for t in tags:
        ue, un = DIRECTIONS[t]
        out.append(displace_platform(original, distance * ue, distance * un, tag=t))
    return out


def sample_target(s: Scenario, rng_seed: int) -> TargetTruth:
    cfg = s.config
    rng = np.random.default_rng(rng_seed)
    dr = cfg.resolution[0]
    r_lo = cfg.range_bounds[0] - dr / 2
    r = rng.uniform(r_lo, cfg.range_bounds[1] + dr / 2)
    theta = rng.uniform(*cfg.azimuth_bounds)
    phi = rng.uniform(*cfg.elevation_bounds)
    mu, l = cfg.rcs_mean, cfg.rcs_range
    sigma = rng.uniform(mu - l / 2, mu + l / 2)
    offset = min(int(math.floor((r - r_lo) / dr)), cfg.num_bins - 1)
    rho = cfg.first_bin_index + offset
    return TargetTruth(r, theta, phi, rho, sigma, sph_to_cart(r, theta, phi))


def _center(M: np.ndarray) -> np.ndarray:
    return M - M.mean(axis=1, keepdims=True)


def simulate_returns(
    s: Scenario,
    t: Optional[TargetTruth],
    K: Optional[int] = None,
    rng_seed: int = 0,
    clutter_mode: str = "factor",
) -> list[RangeBinData]:
    """Matched-filtered returns for every bin of the constrained area.

    ``clutter_mode="factor"`` draws clutter through the exact per-bin
    covariance square root; ``"patches"`` sums one complex Gaussian
    reflectivity per patch. Both give the same clutter distribution; the
    first is far cheaper. With ``t`` absent, ``Y`` and ``Z`` both hold the
    null-hypothesis clutter-plus-noise data and ``X`` is zero.
    """
    K = s.config.num_realizations if K is None else K
    if K < 1:
        raise ValueError(f"need K >= 1, got {K}")
    rng = np.random.default_rng(rng_seed)
    L = s.geometry.num_channels
    noise_sd = math.sqrt(s.config.noise_power)
    if t is not None:
        a_t = steering_vector(s.geometry, s, t.r, t.theta, t.phi)
        alpha = math.sqrt(t.rcs) * np.exp(2j * np.pi * rng.uniform(size=K))
    out = []
    for i, rho in enumerate(s.bin_indices):
        if clutter_mode == "factor":
            C = s.clutter_factors[i] @ complex_normal(rng, (L, K))
        elif clutter_mode == "patches":
            idx = s.bin_patches(i)
            gam = complex_normal(rng, (idx.size, K)) * np.sqrt(s.patch_powers[idx])[:, None]
            C = s.bin_steering(i) @ gam if idx.size else np.zeros((L, K), complex)
        else:
            raise ValueError(f"unknown clutter_mode {clutter_mode!r}")
        N = noise_sd * complex_normal(rng, (L, K))
        C, N = _center(C), _center(N)
        if t is not None and rho == t.bin_index:
            X = _center(np.outer(a_t, alpha))
        else:
            X = np.zeros((L, K), dtype=complex)
        Y = X + C + N
        out.append(RangeBinData(int(rho), Y, X, C, N, Y if t is None else None))
    return out


def calibrate_rcs(s: Scenario, target_mean_scnr_db: float, n_cal: int = 256, rng_seed: int = 0, covariances=None) -> float:
    """RCS mean that puts the dataset's mean output SCNR at the requested level.

    Output SCNR is linear in the target power, so the dB mean measured at
    unit RCS shifts one-for-one with ``10 log10(mu)``.
    """
    from . import stap

    if n_cal < 32:
        raise ValueError("need n_cal >= 32 calibration examples")
    if s.config.noise_power == 0 and not np.any(s.clutter_covariances):
        raise CalibrationError("degenerate scene: no clutter and no noise")
    covs = covariances if covariances is not None else stap.scenario_covariances(s)
    vals = []
    for i in range(n_cal):
        seed = derive_seed(rng_seed, i)
        t = replace(sample_target(s, seed), rcs=1.0)
        bins = simulate_returns(s, t, rng_seed=derive_seed(seed, 1))
        j = t.bin_index - s.config.first_bin_index
        b = bins[j]
        vals.append(stap.output_scnr(b.X, b.C, b.N, covs[j]))
    measured = stap.mean_output_scnr(vals)
    if not math.isfinite(measured):
        raise CalibrationError(f"calibration measured a non-finite SCNR ({measured})")
    return 10 ** ((target_mean_scnr_db - measured) / 10)


def with_rcs_mean(s: Scenario, mu: float) -> Scenario:
    """Scenario with RCS mean ``mu``, keeping the RCS spread proportional."""
    cfg = s.config
    ratio = cfg.rcs_range / cfg.rcs_mean if cfg.rcs_mean > 0 else 0.0
    new_cfg = replace(cfg, rcs_mean=mu, rcs_range=ratio * mu)
    return Scenario(new_cfg, s.geometry, s.patch_positions, s.patch_powers, s.patch_ids, s.anchor, s.scenario_id)
