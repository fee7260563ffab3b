"""Receding-horizon Funnel-MPC closed loop."""

from __future__ import annotations

import logging
import time

import numpy as np

from ..errors import FunnelMPCError, FunnelViolation
from ..funnel import cascade_batch
from ..simloop import HOLD_CHECK_POINTS, HoldPropagator, build_record
from .ocp import Shooting, fc_rollout, fc_warm_start, solve_ocp, theta

log = logging.getLogger(__name__)


def run_funnel_mpc(plant, spec, ref, z0, config, cost, t_end, t0=0.0,
                   check_points=HOLD_CHECK_POINTS, callback=None):
    """Measure, tighten, optimise, apply the first input for ``delta``, repeat.

    One extra OCP is solved at ``t_end`` so that the record holds the input
    the controller would apply there.  Per-step solver diagnostics are kept
    in ``record.diagnostics``.
    """
    delta = config.delta
    n = int(round((t_end - t0) / delta))
    z = np.asarray(z0, dtype=float)
    shooting = Shooting(plant, config)
    prop = HoldPropagator(plant, check_points)
    ts, zs, us, tcs, zcs, diags = [], [], [], [], [], []
    prev = None
    first_open_loop = None
    for step in range(n + 1):
        t_hat = t0 + step * delta if step < n else t_end
        tic = time.perf_counter()
        rollout = fc_rollout(plant, spec, ref, t_hat, z, config)
        Theta = theta(plant, spec, ref, t_hat, z, mode=config.theta_mode, rollout=rollout)
        guess = fc_warm_start(rollout, config)
        warm = None
        if prev is not None:
            warm = np.concatenate([prev[1:], guess[-1:]])
        try:
            sol = solve_ocp(plant, spec, ref, t_hat, z, config, cost, Theta,
                            warm_start=warm, fc_guess=guess, shooting=shooting)
        except FunnelMPCError as exc:
            raise type(exc)(f"MPC step {step} (t={t_hat:.6g}): {exc}") from exc
        if first_open_loop is None:
            first_open_loop = sol
        u = sol.u[0]
        ts.append(t_hat)
        zs.append(z)
        us.append(u)
        diags.append({
            "step": step,
            "t": t_hat,
            "theta": Theta,
            "iterations": sol.iterations,
            "objective": sol.objective,
            "warm_objective": sol.warm_objective,
            "min_margin": sol.min_margin,
            "converged": sol.converged,
            "restored": sol.restored,
            "seconds": time.perf_counter() - tic,
        })
        if callback is not None:
            callback(step, sol)
        if step == n:
            break
        t_next = t0 + (step + 1) * delta if step + 1 < n else t_end
        z, tc, zc = prop(t_hat, z, np.atleast_1d(u), t_next)
        tcs.append(tc)
        zcs.append(zc)
        prev = sol.u
    holds = None
    if check_points and tcs:
        m = cascade_batch(plant, spec, ref, np.concatenate(tcs), np.concatenate(zcs)).margin
        holds = np.where(np.isnan(m), -np.inf, m).reshape(len(tcs), check_points).min(axis=1)
    rec = build_record(plant, spec, ref, np.array(ts), np.array(zs), np.array(us),
                       hold_min_margin=holds, diagnostics=diags,
                       meta={"kind": "funnel_mpc", "delta": delta, "t_end": t_end,
                             "cost": cost.kind, "lam": cost.lam})
    rec.meta["first_open_loop"] = first_open_loop
    if not rec.feasible:
        exc = FunnelViolation(-1, float(rec.t[np.argmin(rec.margin)]), rec.min_margin)
        exc.record = rec
        raise exc
    return rec


def open_loop_measure(plant, spec, ref, sol, cost, config):
    """Sum of ``cost`` over the predicted trajectory of one OCP at ``t_hat + i delta``."""
    idx = np.arange(config.horizon_steps) * config.substeps
    cb = cascade_batch(plant, spec, ref, sol.times[idx], sol.states[idx])
    return float(np.sum(cost.evaluate(cb.e, cb.k, sol.u.reshape(len(idx), -1))))
