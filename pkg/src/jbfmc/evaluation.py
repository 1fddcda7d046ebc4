"""Ambiguity alignment and NMSE scoring of cascaded-channel estimates.

(G Phi, Phi^{-1} H) produces the same received signal as (G, H) for any
invertible diagonal Phi, so estimates are only scored after removing the
best such scaling per column of G and per row of H (and of Z).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MetricError",
    "AlignedEstimates",
    "TrialResult",
    "align_diagonal",
    "align_rows",
    "align_estimates",
    "nmse",
    "to_db",
    "evaluate_trial",
]


class MetricError(ValueError):
    """NMSE against an all-zero reference is undefined."""


@dataclass(frozen=True)
class AlignedEstimates:
    G: np.ndarray
    H: np.ndarray
    phi: np.ndarray  # N x N diagonal fitted to the columns of G


@dataclass
class TrialResult:
    method: str
    seed: int
    nmse_g: float = float("nan")
    nmse_h: float = float("nan")
    nmse_z: float = float("nan")  # factorization output, before completion
    failed: bool = False
    converged: bool = False
    bigamp_sweeps: int = 0
    completion_iters: int = 0
    wall_ms: float = 0.0
    residual_history: list = field(default_factory=list)
    estimates: dict = field(default_factory=dict, repr=False, compare=False)

    CSV_FIELDS = ("method", "seed", "nmse_g_db", "nmse_h_db", "nmse_z_db", "failed",
                  "converged", "bigamp_sweeps", "completion_iters", "wall_ms")

    def csv_row(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "nmse_g_db": repr(to_db(self.nmse_g)),
            "nmse_h_db": repr(to_db(self.nmse_h)),
            "nmse_z_db": repr(to_db(self.nmse_z)),
            "failed": int(self.failed),
            "converged": int(self.converged),
            "bigamp_sweeps": self.bigamp_sweeps,
            "completion_iters": self.completion_iters,
            "wall_ms": f"{self.wall_ms:.3f}",
        }


def _column_scalars(est, truth):
    """Least-squares scalars phi_j minimizing ||est[:, j] phi_j - truth[:, j]||."""
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {truth.shape}")
    energy = np.sum(np.abs(est) ** 2, axis=0)
    cross = np.sum(est.conj() * truth, axis=0)
    phi = np.ones(est.shape[1], dtype=complex)
    nz = energy > 0
    with np.errstate(over="ignore", invalid="ignore"):
        phi[nz] = cross[nz] / energy[nz]
    # a column so small that the scalar overflows is treated like a zero column
    phi[~np.isfinite(phi)] = 1.0
    return phi


def align_diagonal(G_est: np.ndarray, G: np.ndarray):
    """Fit Phi column by column so that G_est Phi is closest to G.

    Returns ``(G_est @ Phi, Phi)``. Columns of ``G_est`` that are identically
    zero get phi = 1.
    """
    phi = _column_scalars(G_est, G)
    return G_est * phi, np.diag(phi)


def align_rows(est: np.ndarray, truth: np.ndarray):
    """Row-wise counterpart of :func:`align_diagonal`: returns ``(D @ est, D)``."""
    phi = _column_scalars(est.T, truth.T)
    return est * phi[:, None], np.diag(phi)


def align_estimates(G_est, H_est, G, H) -> AlignedEstimates:
    G_al, phi = align_diagonal(G_est, G)
    H_al, _ = align_rows(H_est, H)
    return AlignedEstimates(G=G_al, H=H_al, phi=phi)


def nmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """||estimate - truth||_F^2 / ||truth||_F^2."""
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    ref = np.linalg.norm(truth) ** 2
    if ref == 0:
        raise MetricError("reference matrix has zero norm")
    return float(np.linalg.norm(estimate - truth) ** 2 / ref)


def to_db(x: float) -> float:
    if x == 0:
        return float("-inf")
    return float(10.0 * np.log10(x))


def evaluate_trial(result: TrialResult, G_est, H_est, channels, Z_est=None, Z=None) -> TrialResult:
    """Fill the NMSE fields of ``result`` from raw estimates.

    Non-finite estimates mark the trial failed and leave the NMSEs at NaN.
    """
    finite = all(np.all(np.isfinite(a)) for a in (G_est, H_est) if a is not None)
    if Z_est is not None:
        finite = finite and np.all(np.isfinite(Z_est))
    if not finite:
        result.failed = True
        return result
    aligned = align_estimates(G_est, H_est, channels.G, channels.H)
    result.nmse_g = nmse(aligned.G, channels.G)
    result.nmse_h = nmse(aligned.H, channels.H)
    if Z_est is not None and Z is not None and np.any(Z):
        result.nmse_z = nmse(align_rows(Z_est, Z)[0], Z)
    return result
