"""Covariance estimation, whitening, the NAMF statistic and heatmap tensors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, SingularityError

SCNR_FLOOR_DB = -300.0
EIG_CLAMP = 1e-12


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    sigma: np.ndarray
    inv_sqrt: np.ndarray
    loading: float
    eigenvalues: np.ndarray  # descending

    @property
    def inverse(self) -> np.ndarray:
        return self.inv_sqrt @ self.inv_sqrt


def covariance_from_matrix(sigma: np.ndarray, loading: float = 0.0) -> CovarianceEstimate:
    """Wrap a Hermitian PSD matrix, computing its inverse square root.

    ``loading`` is the absolute amount already added to the diagonal and is
    only recorded.
    """
    sigma = np.asarray(sigma, dtype=complex)
    sigma = 0.5 * (sigma + sigma.conj().T)
    w, V = np.linalg.eigh(sigma)
    w, V = w[::-1], V[:, ::-1]
    if not w[0] > 0:
        raise SingularityError("covariance has no positive eigenvalue")
    wc = np.maximum(w, EIG_CLAMP * w[0])
    inv_sqrt = (V / np.sqrt(wc)) @ V.conj().T
    return CovarianceEstimate(sigma, inv_sqrt, float(loading), np.maximum(w, 0.0))


def estimate_covariance(Z_batches: Sequence[np.ndarray], loading_factor: float = 1e-6) -> CovarianceEstimate:
    """Sample covariance over all columns of all batches, diagonally loaded.

    The load is ``loading_factor * mean(diag)``.
    """
    if loading_factor < 0:
        raise ValueError("loading_factor must be nonnegative")
    Z_batches = [np.asarray(Z) for Z in Z_batches]
    if not Z_batches:
        raise ValueError("need at least one batch")
    L = Z_batches[0].shape[0]
    M = sum(Z.shape[1] for Z in Z_batches)
    if M < L and loading_factor == 0:
        raise SingularityError(f"{M} columns cannot give a nonsingular {L}x{L} covariance without loading")
    S = sum(Z @ Z.conj().T for Z in Z_batches) / M
    load = loading_factor * float(np.real(np.trace(S))) / L
    if load == 0 and not np.any(S):
        raise SingularityError("zero data and zero loading")
    return covariance_from_matrix(S + load * np.eye(L), load)


def whiten(cov: CovarianceEstimate, M: np.ndarray) -> np.ndarray:
    M = np.asarray(M)
    if M.shape[0] != cov.inv_sqrt.shape[1]:
        raise ValueError(f"dimension mismatch: whitener is {cov.inv_sqrt.shape}, data has {M.shape[0]} rows")
    return cov.inv_sqrt @ M


def namf_statistic(Y_hat: np.ndarray, a_hat: np.ndarray) -> float:
    """NAMF value for one whitened data matrix and whitened steering vector.

    The denominator uses the Euclidean norm of the vector of per-column
    energies of ``Y_hat``.
    """
    Y_hat = np.asarray(Y_hat)
    if Y_hat.ndim == 1:
        Y_hat = Y_hat[:, None]
    a_hat = np.asarray(a_hat).ravel()
    aa = float(np.real(np.vdot(a_hat, a_hat)))
    if aa == 0:
        raise DomainError("zero steering vector")
    energies = np.sum(np.abs(Y_hat) ** 2, axis=0)
    den_y = float(np.linalg.norm(energies))
    if den_y == 0:
        raise DomainError("zero data matrix")
    num = float(np.sum(np.abs(a_hat.conj() @ Y_hat) ** 2))
    return num / (aa * den_y)


def scenario_covariances(
    s, columns: Optional[int] = None, loading_factor: float = 1e-6, seed: Optional[int] = None, shared: bool = False
) -> list[CovarianceEstimate]:
    """Whitening covariances from a dedicated null-hypothesis batch.

    ``columns`` defaults to 100 L. With ``shared`` the batch is pooled over
    all bins and a single estimate serves every bin.
    """
    from .scene import derive_seed, simulate_returns

    L = s.geometry.num_channels
    columns = columns or 100 * L
    seed = derive_seed(s.config.clutter_seed, 0x5EED) if seed is None else seed
    bins = simulate_returns(s, None, K=columns, rng_seed=seed)
    if shared:
        est = estimate_covariance([b.Z for b in bins], loading_factor)
        return [est] * len(bins)
    return [estimate_covariance([b.Z], loading_factor) for b in bins]


@dataclass(frozen=True, eq=False)
class SteeringGrid:
    azimuths: np.ndarray
    elevations: np.ndarray
    whitened: np.ndarray  # (num_bins, L, n_theta * n_phi)
    norms: np.ndarray  # (num_bins, n_theta * n_phi), a_hat^H a_hat
    whiteners: np.ndarray  # (num_bins, L, L)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.whitened.shape[0], len(self.azimuths), len(self.elevations))


def steering_grid(s, covs: Sequence[CovarianceEstimate]) -> SteeringGrid:
    from .scene import steering_matrix

    th, ph = np.meshgrid(s.azimuth_grid, s.elevation_grid, indexing="ij")
    A = steering_matrix(s.geometry, s.boresight, th.ravel(), ph.ravel())
    W = np.stack([c.inv_sqrt for c in covs])
    Ahat = W @ A
    norms = np.sum(np.abs(Ahat) ** 2, axis=1)
    return SteeringGrid(s.azimuth_grid.copy(), s.elevation_grid.copy(), Ahat, norms, W)


@dataclass(eq=False)
class HeatmapTensor:
    values: np.ndarray  # (num_bins, n_theta, n_phi)
    label: object  # TargetTruth
    scenario_id: str
    mean_output_scnr_db: float


def heatmap_values(Y: np.ndarray, grid: SteeringGrid) -> np.ndarray:
    """NAMF values for stacked data ``Y`` of shape ``(num_bins, L, K)``."""
    Yh = grid.whiteners @ Y
    energies = np.sum(np.abs(Yh) ** 2, axis=1)  # (bins, K)
    den_y = np.linalg.norm(energies, axis=1)  # (bins,)
    if np.any(den_y == 0):
        raise DomainError("zero data matrix in a range bin")
    proj = np.conj(np.swapaxes(grid.whitened, 1, 2)) @ Yh  # (bins, G, K)
    num = np.sum(proj.real**2 + proj.imag**2, axis=2)
    vals = num / (grid.norms * den_y[:, None])
    return vals.reshape(grid.shape)


def build_heatmap(returns, cov_per_bin, grid: SteeringGrid, truth, scenario_id: str = "O", first_bin_index=None) -> HeatmapTensor:
    nb = grid.shape[0]
    if len(returns) != nb or len(cov_per_bin) != nb:
        raise ValueError(f"expected {nb} bins, got {len(returns)} returns and {len(cov_per_bin)} covariances")
    Y = np.stack([b.Y for b in returns])
    vals = heatmap_values(Y, grid)
    scnr = float("nan")
    if truth is not None:
        P = returns[0].bin_index if first_bin_index is None else first_bin_index
        j = truth.bin_index - P
        b = returns[j]
        scnr = output_scnr(b.X, b.C, b.N, cov_per_bin[j])
    return HeatmapTensor(vals, truth, scenario_id, scnr)


def output_scnr(X, C, N, cov: CovarianceEstimate) -> float:
    """Post-whitening signal to clutter-plus-noise ratio in dB."""
    X, C, N = (np.asarray(m) for m in (X, C, N))
    if not (X.shape == C.shape == N.shape):
        raise ValueError("X, C and N must share a shape")
    W = C + N
    den = float(np.sum(np.abs(cov.inv_sqrt @ W) ** 2))
    if den == 0:
        raise DomainError("zero clutter-plus-noise")
    num = float(np.sum(np.abs(cov.inv_sqrt @ X) ** 2))
    if num == 0:
        return SCNR_FLOOR_DB
    return max(10.0 * math.log10(num / den), SCNR_FLOOR_DB)


def mean_output_scnr(values_db: Sequence[float]) -> float:
    """Arithmetic mean of per-example output SCNRs, averaged in dB."""
    values_db = list(values_db)
    if not values_db:
        raise ValueError("need at least one SCNR value")
    return float(np.mean(values_db))
