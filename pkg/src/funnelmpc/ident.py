"""Learning phase: excite the plant with sampled funnel control, then fit it.

The unknown parameters are ``(alpha, m1, m2, k, d)`` and the initial state
``z0``.  The model output on the sampling grid is produced by chaining the
exact zero-order-hold flow of the linear plant.  Since that output is linear
in ``z0``, the fit is separable: for fixed physical parameters ``z0`` solves
a box-constrained linear least-squares problem, and Nelder-Mead searches the
five physical parameters only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear, minimize
from scipy.signal import fftconvolve
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import AllStartsFailed, FunnelViolation
from .plant import mass_on_car_matrices
from .simloop import simulate_fc_zoh, zoh_discretize

__all__ = [
    "PHYSICAL_NAMES",
    "ParamBox",
    "LearningData",
    "IdentResult",
    "collect_learning_data",
    "simulate_output",
    "identification_objective",
    "identify",
    "prediction_error",
    "reference_run",
    "MassOnCarIdentifier",
]

PHYSICAL_NAMES = ("alpha", "m1", "m2", "k", "d")
# beyond this length the forced response is convolved via FFT
_FFT_LENGTH = 4096


@dataclass(frozen=True)
class ParamBox:
    """Closed intervals for the physical parameters and the initial state."""

    alpha: tuple = (0.0, math.pi / 2)
    m1: tuple = (2.0, 6.0)
    m2: tuple = (0.5, 1.5)
    k: tuple = (1.0, 3.0)
    d: tuple = (0.5, 1.5)
    z0: tuple = ((-2.5, 3.5), (-1.0, 1.0), (-2.75, 3.25), (-1.0, 1.0))

    def __post_init__(self):
        for name in PHYSICAL_NAMES:
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"empty interval for {name}: [{lo}, {hi}]")
        if len(self.z0) != 4:
            raise ValueError("z0 box needs four intervals")
        for i, (lo, hi) in enumerate(self.z0):
            if not lo <= hi:
                raise ValueError(f"empty interval for z0[{i}]: [{lo}, {hi}]")
        lo, hi = self.alpha
        if lo < 0 or hi > math.pi / 2:
            raise ValueError("alpha interval must lie in [0, pi/2]")
        for name in PHYSICAL_NAMES[1:]:
            if getattr(self, name)[0] <= 0:
                raise ValueError(f"{name} interval must be positive")

    @property
    def lower(self):
        return np.array([getattr(self, n)[0] for n in PHYSICAL_NAMES])

    @property
    def upper(self):
        return np.array([getattr(self, n)[1] for n in PHYSICAL_NAMES])

    @property
    def z0_lower(self):
        return np.array([iv[0] for iv in self.z0])

    @property
    def z0_upper(self):
        return np.array([iv[1] for iv in self.z0])

    @classmethod
    def point(cls, theta, z0):
        """Degenerate box containing a single parameter vector."""
        kw = {n: (float(v), float(v)) for n, v in zip(PHYSICAL_NAMES, theta)}
        return cls(z0=tuple((float(v), float(v)) for v in z0), **kw)


@dataclass(frozen=True)
class LearningData:
    """Input and output samples ``(u(i tau), y(i tau))``, ``i = 0..M``."""

    tau: float
    u: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        u = np.asarray(self.u, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if len(u) != len(y) or len(u) < 3:
            raise ValueError("need matching u and y with at least 3 samples")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise ValueError("learning data must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    @property
    def n_samples(self):
        return len(self.y)

    @property
    def times(self):
        return self.tau * np.arange(self.n_samples)


@dataclass
class IdentResult:
    alpha: float
    m1: float
    m2: float
    k: float
    d: float
    z0: np.ndarray
    residual: float
    best_start: int
    starts: list = field(default_factory=list)

    @property
    def theta(self):
        return np.array([self.alpha, self.m1, self.m2, self.k, self.d])

    def as_dict(self):
        out = {n: float(v) for n, v in zip(PHYSICAL_NAMES, self.theta)}
        out.update({f"z0_{i}": float(v) for i, v in enumerate(self.z0)})
        out["residual"] = self.residual
        return out


def collect_learning_data(true_plant, spec, ref, z0_true, tau, t_bar):
    """Run sampled funnel control on ``[0, t_bar]`` and keep ``(u, y)`` at the samples."""
    rec = simulate_fc_zoh(true_plant, spec, ref, z0_true, t_bar, tau)
    if not rec.feasible:
        raise FunnelViolation(-1, rec.first_violation_time or float(rec.t[-1]), rec.min_margin)
    return LearningData(tau, rec.u[:, 0], rec.y[:, 0])


def _discrete(theta, tau):
    A, B, C = mass_on_car_matrices(theta[1], theta[2], theta[3], theta[4], theta[0])
    Ad, Bd = zoh_discretize(A, B, tau)
    return Ad, Bd[:, 0], C[0]


def _observability_rows(c, Ad, n):
    """Rows ``c Ad^i`` for ``i = 0..n-1`` by repeated doubling."""
    rows = np.empty((n, len(c)))
    rows[0] = c
    filled, P = 1, Ad
    while filled < n:
        m = min(filled, n - filled)
        rows[filled:filled + m] = rows[:m] @ P
        filled += m
        P = P @ P
    return rows


def _response_parts(theta, u, tau):
    """Free-response basis ``O`` (n x 4) and forced output ``y_u`` so that ``y = O z0 + y_u``."""
    Ad, bd, c = _discrete(theta, tau)
    n = len(u)
    O = _observability_rows(c, Ad, n)
    h = O[:-1] @ bd  # Markov parameters c Ad^i bd
    conv = fftconvolve if n > _FFT_LENGTH else np.convolve
    y_u = np.zeros(n)
    y_u[1:] = conv(u[:-1], h)[: n - 1]
    return O, y_u


def simulate_output(theta, z0, u, tau):
    """Model output at ``i tau`` under the held inputs ``u[i]`` from ``z0``."""
    u = np.asarray(u, dtype=float).ravel()
    O, y_u = _response_parts(np.asarray(theta, dtype=float), u, tau)
    return O @ np.asarray(z0, dtype=float) + y_u


def identification_objective(theta, z0, data):
    """Sum of squared output residuals over all samples."""
    r = simulate_output(theta, z0, data.u, data.tau) - data.y
    return float(r @ r)


def _best_z0(O, target, lo, hi):
    z, *_ = np.linalg.lstsq(O, target, rcond=None)
    if np.all(z >= lo) and np.all(z <= hi):
        return z
    fixed = lo == hi
    if np.all(fixed):
        return lo.copy()
    z = lo.copy()
    free = ~fixed
    rhs = target - O[:, fixed] @ lo[fixed]
    z[free] = lsq_linear(O[:, free], rhs, bounds=(lo[free], hi[free]), method="bvls").x
    return z


def _projected(theta, data, box):
    """Residual minimised over ``z0`` for fixed physical parameters."""
    with np.errstate(all="ignore"):
        O, y_u = _response_parts(theta, data.u, data.tau)
        if not (np.all(np.isfinite(O)) and np.all(np.isfinite(y_u))):
            return np.inf, None
        z0 = _best_z0(O, data.y - y_u, box.z0_lower, box.z0_upper)
        r = O @ z0 + y_u - data.y
        val = float(r @ r)
    return (val, z0) if np.isfinite(val) else (np.inf, None)


def identify(data, box=None, multistart=20, seed=0, max_fev=2000, xatol=1e-10, fatol=1e-16):
    """Multistart Nelder-Mead fit of the plant to ``data``; the best start wins.

    Starting points are uniform draws in ``box`` from ``numpy``'s default
    generator seeded with ``seed``.  Ties are broken by start index.
    """
    box = ParamBox() if box is None else box
    if multistart < 1:
        raise ValueError("multistart must be >= 1")
    if not np.any(data.u != 0) and not np.any(data.y != 0):
        raise ValueError("learning data carries no excitation")
    lo, hi = box.lower, box.upper
    free = hi > lo
    rng = np.random.default_rng(seed)
    draws = rng.uniform(lo, hi, size=(multistart, len(lo)))

    def full(xf):
        theta = lo.copy()
        theta[free] = np.clip(xf, lo[free], hi[free])
        return theta

    def fun(xf):
        return _projected(full(xf), data, box)[0]

    starts = []
    best = None
    for j, x0 in enumerate(draws):
        if np.any(free):
            res = minimize(fun, x0[free], method="Nelder-Mead",
                           bounds=list(zip(lo[free], hi[free])),
                           options={"maxfev": max_fev, "xatol": xatol, "fatol": fatol,
                                    "adaptive": True})
            theta, val, nfev, ok = full(res.x), float(res.fun), int(res.nfev), bool(res.success)
        else:
            theta, nfev, ok = lo.copy(), 1, True
            val = fun(theta[free])
        starts.append({"start": j, "objective": val, "nfev": nfev, "success": ok})
        if np.isfinite(val) and (best is None or val < best[0]):
            best = (val, theta, j)
    if best is None:
        raise AllStartsFailed(f"all {multistart} starts gave a non-finite objective: {starts}")
    val, theta, j = best
    _, z0 = _projected(theta, data, box)
    return IdentResult(*map(float, theta), z0=z0, residual=val, best_start=j, starts=starts)


_REFERENCE_RUNS = {}


def reference_run(true_plant, spec, ref, z0_true, t_end, tau):
    """Closed-loop sampled funnel control on the true plant (memoised per argument set)."""
    key = (true_plant.params, spec, ref, tuple(np.asarray(z0_true, dtype=float)), t_end, tau)
    if key not in _REFERENCE_RUNS:
        rec = simulate_fc_zoh(true_plant, spec, ref, z0_true, t_end, tau, check_points=0)
        if not rec.feasible:
            raise FunnelViolation(-1, rec.first_violation_time or float(rec.t[-1]), rec.min_margin)
        _REFERENCE_RUNS[key] = (rec.u[:, 0].copy(), rec.y[:, 0].copy())
    return _REFERENCE_RUNS[key]


def prediction_error(fitted, true_plant, spec, ref, t_end=100.0, tau=1e-3, z0_true=None,
                     return_gap=False):
    """2-norm and sup-norm of ``y - y_hat`` on the ``tau`` grid over ``[0, t_end]``.

    ``y`` comes from funnel control on the true plant; ``y_hat`` replays the
    same input sequence open loop on the fitted plant from the fitted ``z0``.
    """
    z0_true = np.zeros(true_plant.n_states) if z0_true is None else z0_true
    u, y = reference_run(true_plant, spec, ref, z0_true, t_end, tau)
    y_hat = simulate_output(fitted.theta, fitted.z0, u, tau)
    gap = y - y_hat
    out = (float(np.linalg.norm(gap)), float(np.max(np.abs(gap))))
    return (*out, gap) if return_gap else out


class MassOnCarIdentifier(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``X`` holds the held inputs, ``y`` the sampled outputs.

    ``predict(X)`` replays an input sequence on the fitted plant from the
    fitted initial state.
    """

    def __init__(self, tau=1e-3, box=None, multistart=20, seed=0, max_fev=2000):
        self.tau = tau
        self.box = box
        self.multistart = multistart
        self.seed = seed
        self.max_fev = max_fev

    def fit(self, X, y):
        u = np.asarray(X, dtype=float).reshape(len(X), -1)
        if u.shape[1] != 1:
            raise ValueError("X must have a single input column")
        data = LearningData(self.tau, u[:, 0], y)
        self.result_ = identify(data, self.box, self.multistart, self.seed, self.max_fev)
        self.theta_ = self.result_.theta
        self.z0_ = self.result_.z0
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        u = np.asarray(X, dtype=float).reshape(len(X), -1)[:, 0]
        return simulate_output(self.theta_, self.z0_, u, self.tau)
