"""Small dense Levenberg-Marquardt for analytic-Jacobian least squares."""

from __future__ import annotations

import numpy as np


def levmar(fun, u0, max_iter=200, rss_tol=1e-10, gtol=1e-14,
           lam0=1e-3, lam_max=1e12, max_step=None):
    """Minimize ||r(u)||^2 where fun(u) -> (r, J).

    Marquardt-scaled damping (lambda * diag(J^T J)); only improving steps
    are accepted, so the returned RSS never exceeds the RSS at u0.
    max_step clips each component of the proposed step: callers with
    sigmoid-transformed parameters use it to keep iterates off the
    flat-gradient plateaus. Converged means the relative RSS decrease of
    the last accepted step fell below rss_tol, the gradient vanished, or
    no improving step exists.

    Returns (u, rss, iterations, converged).
    """
    u = np.asarray(u0, dtype=np.float64).copy()
    r, J = fun(u)
    rss = float(r @ r)
    lam = lam0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        g = J.T @ r
        if np.max(np.abs(g)) < gtol:
            converged = True
            break
        H = J.T @ J
        diag = np.maximum(np.diag(H), 1e-12)
        accepted = False
        while lam <= lam_max:
            A = H + lam * np.diag(diag)
            try:
                delta = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if not np.all(np.isfinite(delta)):
                lam *= 10.0
                continue
            if max_step is not None:
                delta = np.clip(delta, -max_step, max_step)
            r_new, J_new = fun(u + delta)
            rss_new = float(r_new @ r_new)
            if np.isfinite(rss_new) and rss_new < rss:
                rel = (rss - rss_new) / rss if rss > 0 else 0.0
                u = u + delta
                r, J, rss = r_new, J_new, rss_new
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if rel < rss_tol:
                    converged = True
                break
            lam *= 10.0
        if not accepted:
            # damping exhausted without improvement: at a minimum to
            # within numerical precision
            converged = True
            break
        if converged:
            break
    return u, rss, it, converged
