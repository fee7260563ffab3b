"""Funnel-MPC: stage costs, the Theta map, single-shooting OCP and the closed loop."""

from ..costs import StageCost, stage_cost_classical, stage_cost_funnel
from .loop import open_loop_measure, run_funnel_mpc
from .ocp import (
    AT_INITIAL_TIME,
    MIN_OVER_HORIZON,
    MpcConfig,
    OcpSolution,
    Shooting,
    ShootingObjective,
    fc_rollout,
    fc_warm_start,
    solve_ocp,
    theta,
)

__all__ = [
    "AT_INITIAL_TIME",
    "MIN_OVER_HORIZON",
    "MpcConfig",
    "OcpSolution",
    "Shooting",
    "ShootingObjective",
    "StageCost",
    "fc_rollout",
    "fc_warm_start",
    "open_loop_measure",
    "run_funnel_mpc",
    "solve_ocp",
    "stage_cost_classical",
    "stage_cost_funnel",
    "theta",
]
