"""Closed-loop simulation: continuous and sampled (ZOH) funnel control.

Both engines return a :class:`SimRecord`; the performance measure of a run
is the plain sum of stage costs at the multiples of a sampling period.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .costs import StageCost
from .errors import FunnelViolation, GridMismatch
from .funnel import cascade_batch, scalar_cascade
from .integrate import integrate_adaptive

log = logging.getLogger(__name__)

__all__ = [
    "SimRecord",
    "build_record",
    "simulate_fc_continuous",
    "simulate_fc_zoh",
    "performance_measure",
    "HOLD_CHECK_POINTS",
]

HOLD_CHECK_POINTS = 10


@dataclass
class SimRecord:
    """Time-stamped closed-loop trajectory.

    ``hold_min_margin[j]`` is the smallest funnel margin found on the dense
    check points strictly inside the j-th hold interval (sampled loops only).
    """

    t: np.ndarray
    z: np.ndarray
    y: np.ndarray
    y_ref: np.ndarray
    e: np.ndarray
    k: np.ndarray
    bound: np.ndarray
    u: np.ndarray
    margin: np.ndarray
    hold_min_margin: np.ndarray | None = None
    first_violation_time: float | None = None
    diagnostics: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def r(self):
        return self.k.shape[1]

    @property
    def min_margin(self):
        """Smallest margin over all recorded ``t > t0`` and inter-sample checks."""
        m = self.margin[1:]
        vals = [np.min(m)] if len(m) else []
        if self.hold_min_margin is not None and len(self.hold_min_margin):
            vals.append(np.min(self.hold_min_margin))
        if not vals:
            return float(self.margin[0])
        out = float(np.min(vals))
        return -np.inf if np.isnan(out) else out

    @property
    def feasible(self):
        return self.first_violation_time is None and self.min_margin > 0

    @property
    def control_range(self):
        return float(np.nanmin(self.u)), float(np.nanmax(self.u))

    @property
    def control_range_width(self):
        lo, hi = self.control_range
        return hi - lo


def build_record(plant, spec, ref, t, z, u, **kwargs):
    """Assemble a record, filling errors, gains and margins from the cascade."""
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float).reshape(len(t), -1)
    cb = cascade_batch(plant, spec, ref, t, z)
    return SimRecord(
        t=t,
        z=z,
        y=plant.output(z),
        y_ref=ref.jet(t, 0)[0],
        e=np.moveaxis(cb.e, 0, 1),
        k=np.moveaxis(cb.k, 0, 1),
        bound=np.moveaxis(cb.bound, 0, 1),
        u=u,
        margin=cb.margin,
        **kwargs,
    )


def _control(plant, spec, ref, t, z):
    es, ks, _ = scalar_cascade(plant, spec, ref, t, z)
    return spec.sigma * ks[-1] * es[-1]


def _check_initial(plant, spec, ref, t0, z0):
    cb = cascade_batch(plant, spec, ref, t0, z0)
    for i in range(spec.r):
        if not cb.margins[i] > 0:
            raise FunnelViolation(i, t0, cb.margins[i] if np.isfinite(cb.margins[i]) else -np.inf)


def output_grid(t0, t_end, dt):
    n = int(round((t_end - t0) / dt))
    grid = t0 + dt * np.arange(n + 1)
    grid[-1] = t_end
    return grid


def simulate_fc_continuous(plant, spec, ref, z0, t_end, t0=0.0, rtol=1e-6, atol=1e-8,
                           dt_out=1e-3, max_step=np.inf):
    """Funnel control evaluated inside the integrator's right-hand side.

    Raises ``FunnelViolation`` if ``(t0, z0)`` is not strictly inside every
    funnel.  Trial stages that leave the funnel evaluate to NaN and are
    rejected by the adaptive integrator.
    """
    z0 = np.asarray(z0, dtype=float)
    _check_initial(plant, spec, ref, t0, z0)

    def rhs(t, z):
        u = _control(plant, spec, ref, t, z)
        return plant.dynamics(z, u)

    grid = output_grid(t0, t_end, dt_out)
    traj = integrate_adaptive(rhs, t0, z0, t_end, rtol=rtol, atol=atol, t_eval=grid,
                              max_step=max_step)
    rows = np.isin(traj.times, grid)
    t, z = traj.times[rows], traj.states[rows]
    cb = cascade_batch(plant, spec, ref, t, z)
    u = spec.sigma * cb.k[-1][:, None] * cb.e[-1]
    rec = build_record(plant, spec, ref, t, z, u, meta={"kind": "fc_continuous"})
    rec.meta["steps"] = len(traj.times) - len(t)
    if not rec.feasible:
        bad = np.nonzero(rec.margin[1:] <= 0)[0]
        if len(bad):
            rec.first_violation_time = float(rec.t[1 + bad[0]])
    return rec


def zoh_discretize(A, B, h):
    """Exact flow of ``zdot = A z + B u`` over ``h`` with constant ``u``: ``(Phi, Gamma)``."""
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A * h
    M[:n, n:] = B * h
    E = expm(M)
    return E[:n, :n], E[:n, n:]


class HoldPropagator:
    """State transition under a held input, plus states at interior check points.

    Linear plants (those exposing ``state_space()``) are propagated with the
    exact matrix exponential; others with adaptive Dormand-Prince.
    """

    def __init__(self, plant, check_points=HOLD_CHECK_POINTS, rtol=1e-10, atol=1e-12):
        self.plant = plant
        self.check_points = check_points
        self.rtol, self.atol = rtol, atol
        ss = getattr(plant, "state_space", None)
        self._ss = ss() if ss is not None else None
        self._cache = {}

    def _fractions(self):
        return np.arange(1, self.check_points + 1) / (self.check_points + 1)

    def _matrices(self, h):
        key = round(h, 15)
        if key not in self._cache:
            A, B, _ = self._ss
            phi, gam = zoh_discretize(A, B, h)
            mats = [zoh_discretize(A, B, f * h) for f in self._fractions()]
            phis = np.array([m[0] for m in mats]).reshape(-1, A.shape[0], A.shape[0])
            gams = np.array([m[1] for m in mats]).reshape(-1, *B.shape)
            self._cache[key] = (phi, gam, phis, gams)
        return self._cache[key]

    def __call__(self, t0, z0, u, t1):
        """Return ``(z(t1), check_times, check_states)``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        h = t1 - t0
        times = t0 + h * self._fractions()
        if self._ss is not None:
            phi, gam, phis, gams = self._matrices(h)
            z1 = phi @ z0 + gam @ u
            zc = phis @ z0 + gams @ u
            return z1, times, zc
        traj = integrate_adaptive(lambda t, z: self.plant.dynamics(z, u), t0, z0, t1,
                                  rtol=self.rtol, atol=self.atol,
                                  t_eval=times if self.check_points else None)
        rows = np.isin(traj.times, times)
        return traj.final, traj.times[rows], traj.states[rows]


def simulate_fc_zoh(plant, spec, ref, z0, t_end, tau, t0=0.0, rtol=1e-10, atol=1e-12,
                    check_points=HOLD_CHECK_POINTS):
    """Funnel control sampled every ``tau`` and held constant in between.

    The control is computed from the exact state at each sampling instant.
    Leaving the funnel does not raise: the run stops at the first sampling
    instant where the control law is undefined; that row is kept with a NaN
    input and the record carries ``first_violation_time``.
    """
    if not tau > 0:
        raise ValueError("sampling period must be positive")
    z = np.asarray(z0, dtype=float)
    _check_initial(plant, spec, ref, t0, z)
    prop = HoldPropagator(plant, check_points, rtol, atol)
    n = int(round((t_end - t0) / tau))
    ts, zs, us, tcs, zcs = [], [], [], [], []
    for j in range(n + 1):
        tj = t0 + j * tau if j < n else t_end
        u = _control(plant, spec, ref, tj, z)
        ts.append(tj)
        zs.append(z)
        us.append(u)
        if not np.isfinite(u):
            log.info("ZOH funnel control undefined at t=%.6g (tau=%.6g)", tj, tau)
            break
        if j == n:
            break
        t_next = t0 + (j + 1) * tau if j + 1 < n else t_end
        z, tc, zc = prop(tj, z, u, t_next)
        tcs.append(tc)
        zcs.append(zc)
    holds = None
    first_violation = None
    if check_points and tcs:
        tc = np.concatenate(tcs)
        m = cascade_batch(plant, spec, ref, tc, np.concatenate(zcs)).margin
        m = np.where(np.isnan(m), -np.inf, m).reshape(len(tcs), check_points)
        holds = m.min(axis=1)
        bad = np.nonzero(~(m.ravel() > 0))[0]
        if len(bad):
            first_violation = float(tc[bad[0]])
    rec = build_record(plant, spec, ref, np.array(ts), np.array(zs), np.array(us),
                       hold_min_margin=holds,
                       meta={"kind": "fc_zoh", "tau": tau, "t_end": t_end})
    bad = np.nonzero(~(rec.margin[1:] > 0))[0]
    if len(bad):
        tb = float(rec.t[1 + bad[0]])
        first_violation = tb if first_violation is None else min(first_violation, tb)
    rec.first_violation_time = first_violation
    return rec


def sample_rows(record, delta, t_end=None, t0=None):
    """Row indices of the record at ``t0 + i*delta``, ``i = 0..(t_end-t0)/delta``."""
    t0 = record.t[0] if t0 is None else t0
    t_end = record.meta.get("t_end", record.t[-1]) if t_end is None else t_end
    n = int(round((t_end - t0) / delta))
    want = t0 + delta * np.arange(n + 1)
    idx = np.searchsorted(record.t, want - 1e-9)
    idx = np.minimum(idx, len(record.t) - 1)
    ok = np.abs(record.t[idx] - want) <= 1e-9 * max(1.0, abs(t_end))
    if not np.all(ok):
        missing = want[~ok][0]
        raise GridMismatch(f"record has no sample at t={missing:.17g}")
    return idx


def performance_measure(record, cost: StageCost, delta, t_end=None):
    """Plain sum of stage costs at ``t = i*delta``, ``i = 0..t_end/delta`` (no ``delta`` weight)."""
    if not record.feasible and len(record.t) and record.t[-1] < record.meta.get("t_end", record.t[-1]):
        # the run left the funnel before t_end: costs are undefined there
        return float("inf")
    idx = sample_rows(record, delta, t_end)
    e = np.moveaxis(record.e[idx], 1, 0)
    k = np.moveaxis(record.k[idx], 1, 0)
    return float(np.sum(cost.evaluate(e, k, record.u[idx])))
