"""Ball-and-Stick model for single-shell data.

Two compartments on normalized signal: an anisotropic stick along
direction n with axial diffusivity d, regularized to an axially
symmetric tensor by fixed perpendicular eigenvalues lambda_perp, and an
isotropic ball with fixed diffusivity d0 weighted by the free water
weight f:

    S1 = exp(-b [d (n.G)^2 + lambda_perp (1 - (n.G)^2)])
    S  = (1 - f) S1 + f exp(-b d0)

lambda_perp = 0 gives the literal zero-radius stick. Fixing d0 and
lambda_perp makes the model identifiable from one non-zero b-value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cordscan.dti import FitDiagnostics, design_matrix, fit_dti_voxel, dti_metrics
from cordscan.errors import InsufficientDirections, NonPositiveS0
from cordscan.gradients import GradientScheme
from cordscan.levmar import levmar

D0_FREE_WATER = 3.0e-3     # mm^2/s, free diffusion coefficient of water
LAMBDA_PERP = 0.2e-3       # mm^2/s, fixed stick perpendicular eigenvalues


@dataclass
class BallStickParams:
    f: float                      # free water weight, in [0, 1]
    d: float                      # stick axial diffusivity, mm^2/s
    n: np.ndarray                 # unit fiber direction
    d0: float = D0_FREE_WATER
    lambda_perp: float = LAMBDA_PERP

    def __post_init__(self):
        if not 0.0 <= self.f <= 1.0:
            raise ValueError(f"f = {self.f} outside [0, 1]")
        if self.d <= 0.0:
            raise ValueError(f"d = {self.d} must be positive")
        self.n = np.asarray(self.n, dtype=np.float64)
        nrm = np.linalg.norm(self.n)
        if abs(nrm - 1.0) > 1e-6:
            raise ValueError(f"|n| = {nrm}, need a unit vector")


@dataclass
class FitConfig:
    d0: float = D0_FREE_WATER
    lambda_perp: float = LAMBDA_PERP
    d_bounds: tuple[float, float] = (1e-5, 4.0e-3)  # covers free water with margin
    f_init: float = 0.1
    max_iter: int = 200
    rss_tol: float = 1e-10
    restarts: int = 2
    degenerate_f: float = 0.95
    degenerate_d_margin: float = 1e-5
    threads: int = 1


def predict_ballstick(p: BallStickParams, scheme: GradientScheme) -> np.ndarray:
    """Normalized signal (S/S0), one per scheme entry; 1 at b = 0.

    Evaluated from the direction vector itself (n enters only as
    (n.G)^2), so n and -n give bitwise-identical signals.
    """
    b = scheme.bvals
    mu2 = (scheme.bvecs @ p.n) ** 2
    stick = np.exp(-b * (p.lambda_perp + (p.d - p.lambda_perp) * mu2))
    return (1.0 - p.f) * stick + p.f * np.exp(-b * p.d0)


def ballstick_jacobian(p: BallStickParams, scheme: GradientScheme
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Signal and its analytic Jacobian w.r.t. (f, d, theta, phi).

    theta/phi are the polar/azimuthal angles of n. Columns are ordered
    (f, d, theta, phi).
    """
    return _signal_jacobian(p.f, p.d, *_angles(p.n), scheme, p.d0, p.lambda_perp,
                            want_jacobian=True)


def _angles(n: np.ndarray) -> tuple[float, float]:
    theta = float(np.arccos(np.clip(n[2], -1.0, 1.0)))
    phi = float(np.arctan2(n[1], n[0]))
    return theta, phi


def _direction(theta: float, phi: float) -> np.ndarray:
    st = np.sin(theta)
    return np.array([st * np.cos(phi), st * np.sin(phi), np.cos(theta)])


def _signal_jacobian(f, d, theta, phi, scheme, d0, lamp, want_jacobian=True):
    b = scheme.bvals
    G = scheme.bvecs
    n = _direction(theta, phi)
    mu = G @ n
    stick = np.exp(-b * (lamp + (d - lamp) * mu ** 2))
    ball = np.exp(-b * d0)
    s = (1.0 - f) * stick + f * ball
    if not want_jacobian:
        return s, None
    dn_dtheta = np.array([np.cos(theta) * np.cos(phi),
                          np.cos(theta) * np.sin(phi),
                          -np.sin(theta)])
    dn_dphi = np.array([-np.sin(theta) * np.sin(phi),
                        np.sin(theta) * np.cos(phi),
                        0.0])
    common = (1.0 - f) * stick * (-2.0 * b * (d - lamp) * mu)
    J = np.empty((b.size, 4))
    J[:, 0] = ball - stick
    J[:, 1] = (1.0 - f) * stick * (-b * mu ** 2)
    J[:, 2] = common * (G @ dn_dtheta)
    J[:, 3] = common * (G @ dn_dphi)
    return s, J


def normalize_attenuation(signals: np.ndarray, scheme: GradientScheme
                          ) -> tuple[np.ndarray, float]:
    """Divide by the mean b=0 signal. Raises NonPositiveS0 if that mean
    is zero or negative."""
    signals = np.asarray(signals, dtype=np.float64)
    s0 = float(np.mean(signals[scheme.b0_mask]))
    if s0 <= 0.0:
        raise NonPositiveS0(f"mean b=0 signal {s0} <= 0")
    return signals / s0, s0


def check_directions(scheme: GradientScheme) -> None:
    """Require >= 6 non-collinear b>0 directions (rank of the quadratic
    form design over the DW entries)."""
    g = scheme.bvecs[scheme.dwi_mask]
    if g.shape[0] < 6:
        raise InsufficientDirections(f"{g.shape[0]} b>0 measurements")
    Q = np.column_stack([g[:, 0] ** 2, g[:, 1] ** 2, g[:, 2] ** 2,
                         g[:, 0] * g[:, 1], g[:, 0] * g[:, 2], g[:, 1] * g[:, 2]])
    if np.linalg.matrix_rank(Q) < 6:
        raise InsufficientDirections("fewer than 6 non-collinear b>0 directions")


def canonical_hemisphere(n: np.ndarray) -> np.ndarray:
    """Report the antipodally ambiguous direction with z >= 0
    (ties: y >= 0, then x >= 0)."""
    if n[2] < 0:
        return -n
    if n[2] == 0:
        if n[1] < 0:
            return -n
        if n[1] == 0 and n[0] < 0:
            return -n
    return n


def _logit(p: float) -> float:
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return float(np.log(p / (1.0 - p)))


def _expit(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


class _Problem:
    """Residuals/Jacobian in unconstrained coordinates.

    u = (uf, ud, theta, phi) with f = expit(uf) and log d interpolating
    the log-bounds through expit(ud), so every iterate is feasible.
    """

    def __init__(self, y, scheme, cfg):
        self.y = y
        self.scheme = scheme
        self.cfg = cfg
        self.log_lo = np.log(cfg.d_bounds[0])
        self.log_hi = np.log(cfg.d_bounds[1])

    def decode(self, u):
        f = _expit(u[0])
        sd = _expit(u[1])
        d = float(np.exp(self.log_lo + (self.log_hi - self.log_lo) * sd))
        return f, d, u[2], u[3]

    def encode(self, f, d, theta, phi):
        frac = (np.log(min(max(d, self.cfg.d_bounds[0]), self.cfg.d_bounds[1]))
                - self.log_lo) / (self.log_hi - self.log_lo)
        # keep the start away from the logistic plateaus, where the
        # transformed gradient vanishes and the optimizer cannot move
        frac = min(max(frac, 0.05), 0.95)
        return np.array([_logit(f), _logit(frac), theta, phi])

    def __call__(self, u):
        f, d, theta, phi = self.decode(u)
        s, J = _signal_jacobian(f, d, theta, phi, self.scheme,
                                self.cfg.d0, self.cfg.lambda_perp)
        sf = _expit(u[0])
        sd = _expit(u[1])
        J = J.copy()
        J[:, 0] *= sf * (1.0 - sf)
        J[:, 1] *= d * (self.log_hi - self.log_lo) * sd * (1.0 - sd)
        return s - self.y, J


def fit_ballstick_voxel(signals: np.ndarray, scheme: GradientScheme,
                        cfg: FitConfig | None = None,
                        dti_design: np.ndarray | None = None,
                        skip_checks: bool = False
                        ) -> tuple[BallStickParams, FitDiagnostics]:
    """Levenberg-Marquardt fit of (f, d, n) on s0-normalized signals.

    Initialization comes from the voxel's DTI fit (n from e1, d from AD);
    up to cfg.restarts extra runs from perturbed inits when the first does
    not converge. The returned residual never exceeds the one at the
    initialization point.
    """
    if cfg is None:
        cfg = FitConfig()
    signals = np.asarray(signals, dtype=np.float64)
    if not skip_checks:
        check_directions(scheme)
    if dti_design is None:
        dti_design = design_matrix(scheme)

    tensor, _ = fit_dti_voxel(signals, scheme, X=dti_design)
    m = dti_metrics(tensor)
    problem = _Problem(signals, scheme, cfg)
    theta0, phi0 = _angles(m.e1)
    u0 = problem.encode(cfg.f_init, m.ad, theta0, phi0)

    best = None
    total_iters = 0
    # deterministic perturbations keep refits bitwise reproducible
    perturbations = [(0.0, 0.0, 0.0, 0.0), (1.0, 1.0, 0.6, 1.1), (-1.0, -1.0, 1.2, -0.9)]
    for attempt in range(1 + cfg.restarts):
        du = np.array(perturbations[attempt % len(perturbations)])
        u, rss, iters, converged = levmar(problem, u0 + du,
                                          max_iter=cfg.max_iter,
                                          rss_tol=cfg.rss_tol,
                                          max_step=2.0)
        total_iters += iters
        if best is None or rss < best[1]:
            best = (u, rss, converged)
        if best[2]:
            break

    u, rss, converged = best
    f, d, theta, phi = problem.decode(u)
    n = canonical_hemisphere(_direction(theta, phi))
    n = n / np.linalg.norm(n)
    params = BallStickParams(f=f, d=d, n=n, d0=cfg.d0, lambda_perp=cfg.lambda_perp)
    degenerate = f > cfg.degenerate_f or (d - cfg.lambda_perp) < cfg.degenerate_d_margin
    diag = FitDiagnostics(rss=rss, iterations=total_iters,
                          converged=converged, degenerate=degenerate)
    return params, diag
