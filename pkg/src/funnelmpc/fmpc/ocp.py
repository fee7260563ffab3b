"""Finite-horizon output-constrained OCP solved by direct single shooting.

Decision variables are ``N`` piecewise-constant inputs on intervals of length
``delta``.  States come from forward integration with ``substeps`` RK4 (or
Euler) steps per interval.  The objective is the trapezoidal quadrature of
the stage cost on that substep grid; funnel constraints enter through a log
barrier (classical cost) or through the cost itself (funnel cost), and the
tightened constraint at ``t_hat + delta`` through a log barrier.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..costs import CLASSICAL, FUNNEL
from ..errors import InfeasibleInitialPoint, SolverStalled
from ..funnel import cascade_batch
from ..simloop import simulate_fc_continuous
from .optim import minimize_bfgs

log = logging.getLogger(__name__)

AT_INITIAL_TIME = "at_initial_time"
MIN_OVER_HORIZON = "min_over_horizon"

RESTORE_MARGIN = 1e-3
RESTORE_GAIN_CLIP = 0.999


@dataclass(frozen=True)
class MpcConfig:
    horizon_steps: int = 41
    delta: float = 1 / 40
    substeps: int = 4
    integrator: str = "rk4"
    max_iter: int = 15
    fd_step: float = 1e-6
    barrier_weights: tuple = (1e-2, 1e-4, 1e-6)
    tol: float = 1e-6
    ftol: float = 1e-8
    enforce_feasibility_constraint: bool = True
    theta_mode: str = MIN_OVER_HORIZON
    rollout_rtol: float = 1e-5
    rollout_atol: float = 1e-7
    rollout_points: int = 20

    def __post_init__(self):
        object.__setattr__(self, "barrier_weights", tuple(self.barrier_weights))
        if not (self.delta > 0):
            raise ValueError("time shift delta must be positive")
        if int(self.horizon_steps) != self.horizon_steps or self.horizon_steps < 1:
            raise ValueError("horizon_steps must be an integer >= 1")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.integrator not in ("rk4", "euler"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.theta_mode not in (AT_INITIAL_TIME, MIN_OVER_HORIZON):
            raise ValueError(f"unknown theta mode {self.theta_mode!r}")
        if not self.barrier_weights or any(w <= 0 for w in self.barrier_weights):
            raise ValueError("barrier weights must be positive")

    @property
    def horizon(self):
        return self.horizon_steps * self.delta

    @property
    def step(self):
        return self.delta / self.substeps


@dataclass
class OcpSolution:
    u: np.ndarray
    times: np.ndarray
    states: np.ndarray
    objective: float
    warm_objective: float
    tight_margins: np.ndarray
    min_margin: float
    iterations: int
    converged: bool
    restored: bool = False
    stage_objectives: list = field(default_factory=list)
    message: str = ""


# -- rollouts ---------------------------------------------------------------

def _rk4_matrices(A, B, h, method):
    n = A.shape[0]
    hA = h * A
    if method == "euler":
        return np.eye(n) + hA, h * B
    hA2 = hA @ hA
    hA3 = hA2 @ hA
    Ad = np.eye(n) + hA + hA2 / 2 + hA3 / 6 + hA3 @ hA / 24
    Bd = h * (np.eye(n) + hA / 2 + hA2 / 6 + hA3 / 24) @ B
    return Ad, Bd


class Shooting:
    """Batched forward simulation of piecewise-constant input sequences.

    For plants with a linear ``state_space()`` one RK4/Euler step with a held
    input is itself a linear map, so the whole rollout collapses to
    ``X = F x0 + S U`` with precomputed ``F`` and ``S``; this is the same
    arithmetic as stepping, rearranged.
    """

    def __init__(self, plant, config):
        self.plant = plant
        self.config = config
        N, S = config.horizon_steps, config.substeps
        self.n_grid = N * S + 1
        self.interval_of_step = np.repeat(np.arange(N), S)
        ss = getattr(plant, "state_space", None)
        self.linear = ss is not None
        if self.linear:
            A, B, _ = ss()
            n, p = B.shape
            Ad, Bd = _rk4_matrices(A, B, config.step, config.integrator)
            F = np.empty((self.n_grid, n, n))
            Sm = np.zeros((self.n_grid, n, N * p))
            F[0] = np.eye(n)
            for j in range(1, self.n_grid):
                F[j] = Ad @ F[j - 1]
                Sm[j] = Ad @ Sm[j - 1]
                i = self.interval_of_step[j - 1]
                Sm[j, :, i * p:(i + 1) * p] += Bd
            self._F = F
            self._S = Sm.reshape(self.n_grid * n, N * p)
            self._n, self._p = n, p

    def rollout(self, x0, U):
        """States on the substep grid, shape ``(batch, N*S+1, n)``.

        ``U`` has shape ``(batch, N)`` (single input) or ``(batch, N, p)``.
        """
        U = np.asarray(U, dtype=float)
        batch = U.shape[0]
        N = self.config.horizon_steps
        U = U.reshape(batch, N, -1)
        x0 = np.asarray(x0, dtype=float)
        if self.linear:
            free = self._F @ x0
            X = free[None] + (U.reshape(batch, -1) @ self._S.T).reshape(batch, self.n_grid, self._n)
            return X
        return self._rollout_generic(x0, U)

    def _rollout_generic(self, x0, U):
        cfg = self.config
        h = cfg.step
        batch = U.shape[0]
        X = np.empty((batch, self.n_grid, len(x0)))
        x = np.broadcast_to(x0, (batch, len(x0))).copy()
        X[:, 0] = x
        f = self.plant.dynamics
        for j in range(self.n_grid - 1):
            u = U[:, self.interval_of_step[j]]
            if cfg.integrator == "euler":
                x = x + h * f(x, u)
            else:
                k1 = f(x, u)
                k2 = f(x + 0.5 * h * k1, u)
                k3 = f(x + 0.5 * h * k2, u)
                k4 = f(x + h * k3, u)
                x = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            X[:, j + 1] = x
        return X


# -- objective --------------------------------------------------------------

class ShootingObjective:
    """Stage-cost quadrature plus barriers for one OCP instance."""

    def __init__(self, plant, spec, ref, t_hat, x_hat, config, cost, theta, shooting=None):
        self.plant, self.spec, self.ref = plant, spec, ref
        self.config, self.cost, self.theta = config, cost, float(theta)
        self.t_hat = float(t_hat)
        self.x_hat = np.asarray(x_hat, dtype=float)
        self.shooting = shooting if shooting is not None else Shooting(plant, config)
        n_grid = self.shooting.n_grid
        self.times = self.t_hat + config.step * np.arange(n_grid)
        w = np.full(n_grid, config.step)
        w[0] = w[-1] = 0.5 * config.step
        self.quad_weights = w
        self.tight_index = config.substeps
        self.barrier_weight = config.barrier_weights[0]

    def evaluate(self, U, gain_clip=None):
        """Per-candidate dict of quadrature, margins and tightening margins."""
        U = np.asarray(U, dtype=float)
        X = self.shooting.rollout(self.x_hat, U)
        cb = cascade_batch(self.plant, self.spec, self.ref, self.times[None, :], X,
                           gain_clip=gain_clip)
        margins = cb.margins[:, :, 1:]
        if self.cost.kind == CLASSICAL:
            integrand = np.sum(np.square(cb.e), axis=(0, -1))
        else:
            integrand = np.sum(cb.k, axis=0)
        quad = integrand @ self.quad_weights
        Uf = U.reshape(U.shape[0], -1)
        quad = quad + self.cost.lam * self.config.delta * np.sum(np.square(Uf), axis=1)
        j = self.tight_index
        norms = np.linalg.norm(cb.e[:, :, j], axis=-1)
        tight = cb.bound[:, :, j] - self.theta - norms
        return {
            "X": X,
            "quad": quad,
            "margins": margins,
            "tight": tight.T,
            "feasible": np.all(margins > 0, axis=(0, 2)) & np.all(np.isfinite(quad)[None], axis=0),
        }

    def feasible(self, ev):
        ok = ev["feasible"] & np.isfinite(ev["quad"])
        if self.config.enforce_feasibility_constraint:
            ok &= np.all(ev["tight"] > 0, axis=1)
        return ok

    def __call__(self, U):
        """Barrier-augmented objective, ``+inf`` outside the strict interior."""
        ev = self.evaluate(U)
        ok = self.feasible(ev)
        val = ev["quad"].copy()
        w = self.barrier_weight
        with np.errstate(all="ignore"):
            if self.cost.kind == CLASSICAL:
                val = val - w * np.sum(np.log(ev["margins"]), axis=(0, 2))
            if self.config.enforce_feasibility_constraint:
                val = val - w * np.sum(np.log(ev["tight"]), axis=1)
        return np.where(ok, val, np.inf)

    def restoration_penalty(self, U):
        """Smooth exterior penalty; zero iff all margins exceed a small buffer."""
        ev = self.evaluate(U, gain_clip=RESTORE_GAIN_CLIP)
        bound = np.moveaxis(
            np.stack([lv.boundary_jet(self.times[1:], 0)[0] for lv in self.spec.levels]), 0, 0
        )[:, None, :]
        short = np.maximum(0.0, RESTORE_MARGIN * bound - ev["margins"])
        pen = np.sum(np.nan_to_num(short, nan=1e6) ** 2, axis=(0, 2))
        if self.config.enforce_feasibility_constraint:
            tshort = np.maximum(0.0, RESTORE_MARGIN * self.theta - ev["tight"])
            pen = pen + np.sum(np.nan_to_num(tshort, nan=1e6) ** 2, axis=1)
        return pen


# -- Theta map ----------------------------------------------------------------

def fc_rollout(plant, spec, ref, t_hat, x_hat, config):
    """Funnel-control closed loop on ``[t_hat, t_hat + T]`` (continuous law)."""
    dt = config.delta / config.rollout_points
    return simulate_fc_continuous(
        plant, spec, ref, x_hat, t_hat + config.horizon, t0=t_hat,
        rtol=config.rollout_rtol, atol=config.rollout_atol, dt_out=dt,
    )


def _initial_margins(plant, spec, ref, t_hat, x_hat):
    cb = cascade_batch(plant, spec, ref, float(t_hat), np.asarray(x_hat, dtype=float))
    m = cb.margins
    if not np.all(m > 0):
        raise InfeasibleInitialPoint(
            f"(t, x) = ({t_hat}, {np.asarray(x_hat).tolist()}) is not inside every funnel"
        )
    return m


def theta(plant, spec, ref, t_hat, x_hat, T=None, mode=MIN_OVER_HORIZON, config=None,
          rollout=None):
    """Feasibility margin used to tighten the constraint at ``t_hat + delta``.

    ``at_initial_time``: ``min_i (1/phi_i(t_hat) - |e_i(t_hat)|)``.
    ``min_over_horizon``: the same minimum taken along the funnel-control
    rollout over ``[t_hat, t_hat + T]``.
    """
    m = _initial_margins(plant, spec, ref, t_hat, x_hat)
    if mode == AT_INITIAL_TIME:
        return float(np.min(m))
    if mode != MIN_OVER_HORIZON:
        raise ValueError(f"unknown theta mode {mode!r}")
    if rollout is None:
        if config is None:
            config = MpcConfig()
        if T is not None and abs(T - config.horizon) > 1e-12:
            raise ValueError("T must match config horizon")
        rollout = fc_rollout(plant, spec, ref, t_hat, x_hat, config)
    return float(min(rollout.min_margin, np.min(m)))


def fc_warm_start(rollout, config):
    """Interval means (trapezoid) of the funnel-control input along a rollout."""
    pts = config.rollout_points
    u = rollout.u[:, 0]
    N = config.horizon_steps
    seg = u[: N * pts + 1]
    w = np.ones(pts + 1)
    w[0] = w[-1] = 0.5
    w /= pts
    out = np.empty(N)
    for i in range(N):
        out[i] = seg[i * pts:(i + 1) * pts + 1] @ w
    return out


# -- solver -----------------------------------------------------------------

def _restore(obj, U0, config):
    """Drive the restoration penalty to zero starting from ``U0``."""

    def pen(U):
        return obj.restoration_penalty(U)

    def stop(U):
        return bool(obj.feasible(obj.evaluate(U[None]))[0])

    best = np.array(U0, dtype=float)
    for _ in range(5):
        res = minimize_bfgs(pen, best, rel_step=config.fd_step, max_iter=config.max_iter,
                            gtol=1e-14, ftol=0.0)
        best = res.x
        if stop(best):
            return best, True
    return best, stop(best)


def solve_ocp(plant, spec, ref, t_hat, x_hat, config, cost, Theta, warm_start=None,
              fc_guess=None, shooting=None):
    """Approximately solve the tightened OCP; never returns an infeasible input.

    Candidate starting points are ``warm_start`` (e.g. the shifted previous
    solution) and ``fc_guess`` (interval means of the funnel controller).
    The returned objective is the smallest stage-cost quadrature over every
    strictly feasible iterate seen, so it never exceeds the starting points'.
    Raises ``SolverStalled`` only if no strictly feasible input was found.
    """
    _initial_margins(plant, spec, ref, t_hat, x_hat)
    obj = ShootingObjective(plant, spec, ref, t_hat, x_hat, config, cost, Theta, shooting)
    N = config.horizon_steps
    cands = [np.asarray(c, dtype=float).reshape(N) for c in (warm_start, fc_guess) if c is not None]
    if not cands:
        cands = [np.zeros(N)]
    C = np.array(cands)
    ev = obj.evaluate(C)
    feas = obj.feasible(ev)
    warm_obj = float(ev["quad"][len(cands) - 1]) if fc_guess is not None and feas[-1] else np.inf

    best_u, best_q = None, np.inf
    for c, q, ok in zip(C, ev["quad"], feas):
        if ok and q < best_q:
            best_u, best_q = c.copy(), float(q)
    restored = False
    if best_u is None:
        restored = True
        start, ok = _restore(obj, C[np.argmin(ev["quad"])] if np.any(np.isfinite(ev["quad"])) else C[0],
                             config)
        if not ok:
            raise SolverStalled(f"no strictly feasible input found at t={t_hat:.6g}")
        best_u = start
        best_q = float(obj.evaluate(start[None])["quad"][0])

    x = best_u.copy()
    iters = 0
    converged = False
    stage_objs = []
    message = ""
    for w in config.barrier_weights:
        obj.barrier_weight = w
        if not np.isfinite(obj(x[None])[0]):
            x = best_u.copy()
        res = minimize_bfgs(obj, x, rel_step=config.fd_step, max_iter=config.max_iter,
                            gtol=config.tol, ftol=config.ftol)
        iters += res.iterations
        converged = res.converged
        message = res.message
        x = res.x
        q = float(obj.evaluate(x[None])["quad"][0])
        stage_objs.append(q)
        if q < best_q:
            best_u, best_q = x.copy(), q
        if cost.kind == FUNNEL and not config.enforce_feasibility_constraint:
            break

    ev = obj.evaluate(best_u[None])
    return OcpSolution(
        u=best_u,
        times=obj.times,
        states=ev["X"][0],
        objective=best_q,
        warm_objective=warm_obj,
        tight_margins=ev["tight"][0],
        min_margin=float(np.min(ev["margins"])),
        iterations=iters,
        converged=converged,
        restored=restored,
        stage_objectives=stage_objs,
        message=message,
    )
