"""BFGS with central finite-difference gradients and a backtracking line search.

The objective is evaluated in batches: ``fun(X)`` maps an ``(m, n)`` array of
points to ``m`` values, where ``+inf`` marks points outside the feasible
region.  Gradients and line-search trial points are each one batch call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ARMIJO_C1 = 1e-4
BACKTRACK_STEPS = 12


@dataclass
class QNResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool
    message: str
    history: list = field(default_factory=list)


def fd_gradient(fun, x, fx, rel_step=1e-6):
    """Central differences (one-sided next to an infinite value)."""
    n = len(x)
    h = rel_step * np.maximum(1.0, np.abs(x))
    pts = np.empty((2 * n, n))
    pts[:n] = x
    pts[n:] = x
    idx = np.arange(n)
    pts[idx, idx] += h
    pts[n + idx, idx] -= h
    vals = fun(pts)
    fp, fm = vals[:n], vals[n:]
    g = (fp - fm) / (2 * h)
    only_m = ~np.isfinite(fp) & np.isfinite(fm)
    only_p = np.isfinite(fp) & ~np.isfinite(fm)
    g[only_m] = (fx - fm[only_m]) / h[only_m]
    g[only_p] = (fp[only_p] - fx) / h[only_p]
    g[~np.isfinite(fp) & ~np.isfinite(fm)] = 0.0
    return g


def minimize_bfgs(fun, x0, rel_step=1e-6, max_iter=100, gtol=1e-6, ftol=1e-12,
                  callback=None):
    """Minimise a batch objective from a point where it is finite."""
    x = np.array(x0, dtype=float)
    fx = float(fun(x[None])[0])
    if not np.isfinite(fx):
        raise ValueError("starting point must have a finite objective")
    n = len(x)
    g = fd_gradient(fun, x, fx, rel_step)
    nev = 1 + 2 * n
    H = np.eye(n)
    scaled = False
    history = [fx]
    alphas = 0.5 ** np.arange(BACKTRACK_STEPS)
    message = "max iterations reached"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= gtol:
            converged, message = True, "gradient tolerance reached"
            it -= 1
            break
        d = -H @ g
        slope = g @ d
        if not slope < 0:
            H = np.eye(n)
            d = -g
            slope = g @ d
        trial = x[None] + alphas[:, None] * d[None]
        ft = fun(trial)
        nev += len(alphas)
        ok = np.isfinite(ft) & (ft <= fx + ARMIJO_C1 * alphas * slope)
        if not np.any(ok):
            if not np.allclose(H, np.eye(n)):
                H = np.eye(n)
                continue
            message = "line search failed"
            break
        j = int(np.argmax(ok))
        x_new, f_new = trial[j], float(ft[j])
        g_new = fd_gradient(fun, x_new, f_new, rel_step)
        nev += 2 * n
        s, y = x_new - x, g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                H = np.eye(n) * (sy / (y @ y))
                scaled = True
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (y @ Hy) + rho) * np.outer(s, s)
        df = fx - f_new
        x, fx, g = x_new, f_new, g_new
        history.append(fx)
        if callback is not None:
            callback(x, fx)
        if df <= ftol * max(1.0, abs(fx)):
            converged, message = True, "objective stalled below tolerance"
            break
    return QNResult(x, fx, it, nev, converged, message, history)
