"""Diffusion tensor model: forward signal, log-linear fit, scalar metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cordscan.errors import RankDeficientDesign
from cordscan.gradients import GradientScheme

EIGENVALUE_FLOOR = 1e-9  # mm^2/s, clamp after fitting


@dataclass
class DiffusionTensor:
    """Symmetric tensor as its six unique components plus the non-DW signal.

    components: (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz) in mm^2/s.
    """

    components: np.ndarray
    s0: float = 1.0

    def matrix(self) -> np.ndarray:
        dxx, dyy, dzz, dxy, dxz, dyz = self.components
        return np.array([[dxx, dxy, dxz],
                         [dxy, dyy, dyz],
                         [dxz, dyz, dzz]])

    @classmethod
    def from_matrix(cls, D: np.ndarray, s0: float = 1.0) -> "DiffusionTensor":
        D = np.asarray(D, dtype=np.float64)
        return cls(np.array([D[0, 0], D[1, 1], D[2, 2],
                             D[0, 1], D[0, 2], D[1, 2]]), float(s0))


@dataclass
class DtiMetrics:
    """Rotation-invariant eigenvalue summaries (eigenvalues sorted descending)."""

    fa: float
    md: float
    ad: float
    rd: float
    e1: np.ndarray  # principal unit eigenvector


@dataclass
class FitDiagnostics:
    rss: float
    iterations: int
    converged: bool
    degenerate: bool = False


def predict_dti(t: DiffusionTensor, scheme: GradientScheme) -> np.ndarray:
    """Signal s0 * exp(-b g^T D g), one value per scheme entry."""
    D = t.matrix()
    quad = np.einsum("ni,ij,nj->n", scheme.bvecs, D, scheme.bvecs)
    return t.s0 * np.exp(-scheme.bvals * quad)


def design_matrix(scheme: GradientScheme) -> np.ndarray:
    """Rows map (log s0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz) to log-signal."""
    b = scheme.bvals
    g = scheme.bvecs
    return np.column_stack([
        np.ones_like(b),
        -b * g[:, 0] ** 2,
        -b * g[:, 1] ** 2,
        -b * g[:, 2] ** 2,
        -2 * b * g[:, 0] * g[:, 1],
        -2 * b * g[:, 0] * g[:, 2],
        -2 * b * g[:, 1] * g[:, 2],
    ])


def check_design(X: np.ndarray) -> None:
    if X.shape[0] < 7 or np.linalg.matrix_rank(X) < 7:
        raise RankDeficientDesign(
            "gradient directions do not span the tensor space "
            "(need >= 6 non-collinear b>0 directions plus b=0)")


def _clamp_eigenvalues(D: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(D)
    w = np.maximum(w, EIGENVALUE_FLOOR)
    return (V * w) @ V.T


def _log_signals(signals: np.ndarray, b0_mask: np.ndarray) -> np.ndarray:
    signals = np.asarray(signals, dtype=np.float64)
    s0_est = float(np.mean(signals[b0_mask])) if b0_mask.any() else float(np.max(signals))
    eps = 1e-6 * max(s0_est, 1e-30)
    return np.log(np.maximum(signals, eps))


def fit_dti_voxel(signals: np.ndarray, scheme: GradientScheme,
                  X: np.ndarray | None = None) -> tuple[DiffusionTensor, FitDiagnostics]:
    """Log-linear least-squares tensor fit of one voxel.

    Negative/zero signals are clamped to 1e-6 * s0 before the log; the
    fitted tensor has its eigenvalues clamped to >= 1e-9 mm^2/s.
    """
    signals = np.asarray(signals, dtype=np.float64)
    if signals.size != len(scheme):
        raise ValueError(f"{signals.size} signals for {len(scheme)} scheme entries")
    if not np.all(np.isfinite(signals)):
        raise ValueError("non-finite signal")
    if X is None:
        X = design_matrix(scheme)
    check_design(X)

    y = _log_signals(signals, scheme.b0_mask)
    beta, res, _, _ = np.linalg.lstsq(X, y, rcond=None)
    rss = float(res[0]) if res.size else float(np.sum((X @ beta - y) ** 2))

    tensor = DiffusionTensor(beta[1:].copy(), s0=float(np.exp(beta[0])))
    D = _clamp_eigenvalues(tensor.matrix())
    tensor = DiffusionTensor.from_matrix(D, s0=tensor.s0)
    return tensor, FitDiagnostics(rss=rss, iterations=1, converged=True)


def dti_metrics(t: DiffusionTensor) -> DtiMetrics:
    """FA, MD, AD, RD and principal direction from the eigendecomposition.

    MD is computed as (AD + 2 RD) / 3 so the identity holds exactly.
    """
    w, V = np.linalg.eigh(t.matrix())
    order = np.argsort(w)[::-1]  # descending
    w = w[order]
    V = V[:, order]
    ad = float(w[0])
    rd = float((w[1] + w[2]) / 2.0)
    md = (ad + 2.0 * rd) / 3.0
    mean = np.mean(w)
    denom = float(np.sum(w ** 2))
    if denom <= 0.0:
        fa = 0.0
    else:
        fa = float(np.sqrt(1.5 * np.sum((w - mean) ** 2) / denom))
    fa = min(max(fa, 0.0), 1.0)
    return DtiMetrics(fa=fa, md=md, ad=ad, rd=rd, e1=V[:, 0].copy())


def fit_dti_batch(signals: np.ndarray, scheme: GradientScheme,
                  X: np.ndarray | None = None) -> np.ndarray:
    """Tensor coefficients (log s0, 6 components) for many voxels at once.

    signals: (n_voxels, n_meas). Returns (n_voxels, 7). Same clamping
    rules as fit_dti_voxel, without the eigenvalue floor (callers that
    need eigenvalues apply it per voxel).
    """
    if X is None:
        X = design_matrix(scheme)
    check_design(X)
    signals = np.asarray(signals, dtype=np.float64)
    s0_est = signals[:, scheme.b0_mask].mean(axis=1)
    eps = 1e-6 * np.maximum(s0_est, 1e-30)
    y = np.log(np.maximum(signals, eps[:, None]))
    pinv = np.linalg.pinv(X)
    return y @ pinv.T
