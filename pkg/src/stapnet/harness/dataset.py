"""Heatmap dataset generation and the ``STAPHMT1`` binary format.

Layout (little-endian)::

    8 bytes   magic  b"STAPHMT1"
    u32 x 5   version, count, bins, n_theta, n_phi
    per example:
        f32 x bins*n_theta*n_phi   NAMF values, bin-major then azimuth then elevation
        f32 x 3                    encoded label
        f32 x 3                    Cartesian truth (m)
        f32                        output SCNR at the target bin (dB)
        u32                        target bin index
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .. import stap
from ..errors import FormatError
from ..localize import CartesianPoint, encode_label
from ..scene import (
    Scenario,
    TargetTruth,
    calibrate_rcs,
    derive_seed,
    sample_target,
    simulate_returns,
    with_rcs_mean,
)

MAGIC = b"STAPHMT1"
VERSION = 1
_HEADER = struct.Struct("<5I")


@dataclass
class StoredExample:
    """A heatmap tensor as read back from disk."""

    values: np.ndarray
    encoded: np.ndarray
    cartesian: np.ndarray
    output_scnr_db: float
    bin_index: int


@dataclass(eq=False)
class ScenarioContext:
    """Per-scenario whitening state shared by every example of a dataset."""

    scenario: Scenario
    covariances: list
    grid: stap.SteeringGrid

    @classmethod
    def build(cls, s: Scenario, shared_covariance: bool = False) -> "ScenarioContext":
        covs = stap.scenario_covariances(s, shared=shared_covariance)
        return cls(s, covs, stap.steering_grid(s, covs))


def _one(ctx: ScenarioContext, seed: int) -> stap.HeatmapTensor:
    s = ctx.scenario
    truth = sample_target(s, derive_seed(seed, 0))
    bins = simulate_returns(s, truth, rng_seed=derive_seed(seed, 1))
    return stap.build_heatmap(bins, ctx.covariances, ctx.grid, truth, s.scenario_id, s.config.first_bin_index)


def generate_dataset(
    s: Scenario,
    count: int,
    target_scnr_db: Optional[float],
    master_seed: int,
    ctx: Optional[ScenarioContext] = None,
    n_cal: int = 256,
    threads: int = 1,
) -> list[stap.HeatmapTensor]:
    """``count`` independent heatmap tensors for scenario ``s``.

    With ``target_scnr_db`` set, the RCS mean is first calibrated so the
    dataset's mean output SCNR lands on it. Example ``i`` depends only on
    ``(master_seed, i)``, so thread count never changes the result.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    ctx = ctx or ScenarioContext.build(s)
    if target_scnr_db is not None:
        mu = calibrate_rcs(ctx.scenario, target_scnr_db, n_cal, derive_seed(master_seed, 0xCA11), ctx.covariances)
        ctx = ScenarioContext(with_rcs_mean(ctx.scenario, mu), ctx.covariances, ctx.grid)
    seeds = [derive_seed(master_seed, i) for i in range(count)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda sd: _one(ctx, sd), seeds))
    return [_one(ctx, sd) for sd in seeds]


def to_arrays(tensors: Sequence, s: Scenario):
    """Stack tensors into ``(inputs, encoded labels, Cartesian truths)`` arrays."""
    X = np.stack([t.values for t in tensors]).astype(np.float32)
    if tensors and isinstance(tensors[0], StoredExample):
        enc = np.stack([t.encoded for t in tensors]).astype(np.float64)
        cart = np.stack([t.cartesian for t in tensors]).astype(np.float64)
    else:
        cart = np.stack([t.label.cartesian.as_array() for t in tensors])
        enc = np.stack([encode_label(t.label.cartesian, s).as_array() for t in tensors])
    return X, enc, cart


def save_dataset(path, tensors: Sequence, s: Optional[Scenario] = None) -> None:
    """Write tensors; labels are encoded against ``s`` unless already stored."""
    if tensors:
        shape = tensors[0].values.shape
    elif s is not None:
        shape = s.grid_shape
    else:
        shape = (0, 0, 0)
    chunks = [MAGIC, _HEADER.pack(VERSION, len(tensors), *shape)]
    for t in tensors:
        if t.values.shape != shape:
            raise ValueError(f"tensor shape {t.values.shape} differs from {shape}")
        if isinstance(t, StoredExample):
            enc, cart, scnr, rho = t.encoded, t.cartesian, t.output_scnr_db, t.bin_index
        else:
            if s is None:
                raise ValueError("a scenario is needed to encode labels")
            cart = t.label.cartesian.as_array()
            enc = encode_label(t.label.cartesian, s).as_array()
            scnr, rho = t.mean_output_scnr_db, t.label.bin_index
        chunks.append(np.ascontiguousarray(t.values, dtype="<f4").tobytes())
        chunks.append(np.asarray(enc, dtype="<f4").tobytes())
        chunks.append(np.asarray(cart, dtype="<f4").tobytes())
        chunks.append(struct.pack("<fI", scnr, rho))
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_dataset(path) -> list[StoredExample]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise FormatError("bad dataset magic", 0)
    pos = len(MAGIC)
    if len(data) < pos + _HEADER.size:
        raise FormatError("truncated dataset header", len(data))
    version, count, nb, nt, nph = _HEADER.unpack_from(data, pos)
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}", pos)
    pos += _HEADER.size
    nvals = nb * nt * nph
    rec = 4 * (nvals + 3 + 3 + 1 + 1)
    expected = pos + count * rec
    if len(data) < expected:
        full = (len(data) - pos) // rec if rec else 0
        raise FormatError(f"truncated dataset: {count} examples declared, {full} complete", pos + full * rec)
    if len(data) > expected:
        raise FormatError("trailing bytes after last example", expected)
    out = []
    for _ in range(count):
        vals = np.frombuffer(data, "<f4", nvals, pos).reshape(nb, nt, nph).astype(np.float32)
        pos += 4 * nvals
        enc = np.frombuffer(data, "<f4", 3, pos).astype(np.float32)
        cart = np.frombuffer(data, "<f4", 3, pos + 12).astype(np.float32)
        scnr, rho = struct.unpack_from("<fI", data, pos + 24)
        pos += 32
        out.append(StoredExample(vals, enc, cart, scnr, rho))
    return out
