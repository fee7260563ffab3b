"""Deterministic ODE integration.

Fixed-step explicit Euler / classical Runge-Kutta and an adaptive embedded
Dormand-Prince 4(5) pair.  All routines are pure functions of their inputs;
a vector field is any callable ``f(t, x) -> xdot`` returning an array with
the same shape as ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteState, StepUnderflow

__all__ = [
    "Trajectory",
    "euler_step",
    "rk4_step",
    "integrate_fixed",
    "integrate_adaptive",
    "hermite_interpolate",
]


@dataclass(frozen=True)
class Trajectory:
    """States sampled on a strictly increasing time grid.

    ``derivs`` holds the vector field at each node when the producing
    integrator knows it; it enables cubic Hermite resampling.
    """

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray | None = None

    def __post_init__(self):
        if len(self.times) != len(self.states) or len(self.times) < 2:
            raise ValueError("trajectory needs >= 2 samples, one state per time")

    @property
    def t0(self):
        return float(self.times[0])

    @property
    def tf(self):
        return float(self.times[-1])

    @property
    def final(self):
        return self.states[-1]

    def sample(self, t):
        """Cubic Hermite resampling at times inside ``[t0, tf]``."""
        if self.derivs is None:
            raise ValueError("trajectory carries no derivatives; cannot interpolate")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        out = np.empty((len(t),) + self.states.shape[1:])
        for j, (ti, i) in enumerate(zip(t, idx)):
            out[j] = hermite_interpolate(
                self.times[i], self.times[i + 1],
                self.states[i], self.states[i + 1],
                self.derivs[i], self.derivs[i + 1], ti,
            )[0]
        return out


def _check(xdot, t):
    if not np.all(np.isfinite(xdot)):
        raise NonFiniteState(t)
    return xdot


def euler_step(f, t, x, h):
    x = np.asarray(x, dtype=float)
    return x + h * _check(np.asarray(f(t, x), dtype=float), t)


def rk4_step(f, t, x, h):
    """One classical fourth-order Runge-Kutta step."""
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float)
    k1 = _check(np.asarray(f(t, x), dtype=float), t)
    k2 = _check(np.asarray(f(t + 0.5 * h, x + 0.5 * h * k1), dtype=float), t + 0.5 * h)
    k3 = _check(np.asarray(f(t + 0.5 * h, x + 0.5 * h * k2), dtype=float), t + 0.5 * h)
    k4 = _check(np.asarray(f(t + h, x + h * k3), dtype=float), t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_STEPPERS = {"rk4": rk4_step, "euler": euler_step}


def fixed_grid(t0, tf, h):
    """Grid ``t0, t0+h, ...`` ending exactly at ``tf`` (last step may be shorter)."""
    if not tf > t0:
        raise ValueError("need tf > t0")
    if not h > 0:
        raise ValueError("step size must be positive")
    n = int(np.ceil((tf - t0) / h - 1e-9))
    times = t0 + h * np.arange(n + 1, dtype=float)
    times[-1] = tf
    return times


def integrate_fixed(f, t0, x0, tf, h, method="rk4"):
    """Repeated single steps of ``method`` ('rk4' or 'euler') on a uniform grid."""
    try:
        step = _STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}") from None
    times = fixed_grid(t0, tf, h)
    x = np.array(x0, dtype=float)
    states = np.empty((len(times),) + x.shape)
    states[0] = x
    for i in range(len(times) - 1):
        x = step(f, times[i], x, times[i + 1] - times[i])
        states[i + 1] = x
    return Trajectory(times, states)


# Dormand-Prince 5(4) tableau (Dormand & Prince 1980), FSAL.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array(_A[6] + [0.0])
_E = np.array([
    71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40,
])


def hermite_interpolate(ta, tb, xa, xb, fa, fb, t):
    """Cubic Hermite value and derivative at ``t`` in ``[ta, tb]``."""
    h = tb - ta
    s = (t - ta) / h
    s2, s3 = s * s, s * s * s
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    # increment form: constant data is reproduced exactly
    dxab = xb - xa
    x = xa + h01 * dxab + h * (h10 * fa + h11 * fb)
    d01 = (-6 * s2 + 6 * s) / h
    d10 = 3 * s2 - 4 * s + 1
    d11 = 3 * s2 - 2 * s
    dx = d01 * dxab + d10 * fa + d11 * fb
    return x, dx


def _initial_step(f, t0, x0, f0, tf, rtol, atol):
    scale = atol + rtol * np.abs(x0)
    d0 = np.max(np.abs(x0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, tf - t0)
    with np.errstate(all="ignore"):
        f1 = np.asarray(f(t0 + h0, x0 + h0 * f0), dtype=float)
    if not np.all(np.isfinite(f1)):
        return h0 * 0.1
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, tf - t0)


def integrate_adaptive(f, t0, x0, tf, rtol=1e-6, atol=1e-8, t_eval=None,
                       h0=None, max_step=np.inf):
    """Dormand-Prince 4(5) with the step rule ``h <- 0.9 h (1/err)^(1/5)``.

    The error of every accepted step satisfies, component-wise,
    ``|est_i| <= atol + rtol * max(|x_i|, |x_new_i|)``.  The returned
    trajectory contains every accepted step plus the times in ``t_eval``
    (filled in by cubic Hermite interpolation).  Trial steps whose stages
    evaluate to NaN/Inf are rejected and retried with a smaller step.
    """
    if not tf > t0:
        raise ValueError("need tf > t0")
    if not (rtol > 0 and atol > 0):
        raise ValueError("tolerances must be positive")
    x = np.array(x0, dtype=float)
    t = float(t0)
    span = tf - t0
    h_min = 1e-14 * span
    with np.errstate(all="ignore"):
        fx = np.asarray(f(t, x), dtype=float)
    _check(fx, t)

    requested = np.array([] if t_eval is None else np.sort(np.asarray(t_eval, dtype=float)))
    requested = requested[(requested > t0) & (requested < tf)]

    if h0 is None:
        h = _initial_step(f, t, x, fx, tf, rtol, atol)
    else:
        h = float(h0)
    h = min(h, max_step)

    times = [t]
    states = [x.copy()]
    derivs = [fx.copy()]
    ri = 0
    k = [None] * 7
    while t < tf:
        last = False
        if t + h >= tf or t + 1.01 * h >= tf:
            h = tf - t
            last = True
        k[0] = fx
        with np.errstate(all="ignore"):
            for s in range(1, 7):
                acc = x.copy()
                for j, a in enumerate(_A[s]):
                    if a != 0.0:
                        acc += (h * a) * k[j]
                k[s] = np.asarray(f(t + _C[s] * h, acc), dtype=float)
            x_new = acc  # stage 7 argument is the 5th-order solution (FSAL)
            est = h * sum(e * kk for e, kk in zip(_E, k) if e != 0.0)
            scale = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
            err = float(np.max(np.abs(est) / scale))
        if not np.isfinite(err) or not np.all(np.isfinite(k[6])):
            h *= 0.2
            if h < h_min:
                raise NonFiniteState(t)
            continue
        if err <= 1.0:
            t_new = tf if last else t + h
            f_new = k[6]
            rj = ri
            while rj < len(requested) and requested[rj] < t_new:
                rj += 1
            if rj > ri:
                tq = requested[ri:rj]
                xi, di = hermite_interpolate(t, t_new, x[None], x_new[None], fx[None],
                                             f_new[None], tq.reshape((-1,) + (1,) * x.ndim))
                times.extend(tq)
                states.extend(xi)
                derivs.extend(di)
                ri = rj
            if ri < len(requested) and requested[ri] == t_new:
                ri += 1
            t, x, fx = t_new, x_new, f_new
            times.append(t)
            states.append(x.copy())
            derivs.append(fx.copy())
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            h = min(h * factor, max_step)
        else:
            h *= min(1.0, max(0.2, 0.9 * err ** -0.2))
            if h < h_min:
                raise StepUnderflow(t, h)
    return Trajectory(np.array(times), np.array(states), np.array(derivs))
