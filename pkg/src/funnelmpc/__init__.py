"""Funnel control, sampled funnel control and Funnel-MPC for the mass on a car.

Submodules: ``integrate`` (ODE solvers), ``plant`` (the model and its output
jets), ``funnel`` (funnel boundaries, error cascade, control law),
``simloop`` (continuous and sampled closed loops), ``fmpc`` (the MPC
scheme), ``ident`` (learning phase) and ``cli``.
"""

from .errors import (
    AllStartsFailed,
    ConfigError,
    FunnelMPCError,
    FunnelViolation,
    InfeasibleInitialPoint,
    NonFiniteState,
    SolverStalled,
)
from .fmpc import MpcConfig, StageCost, run_funnel_mpc, solve_ocp, theta
from .funnel import FunnelLevel, FunnelSpec, ReferenceSignal, error_cascade, funnel_control
from .plant import MassOnCar, MassOnCarParams
from .simloop import SimRecord, performance_measure, simulate_fc_continuous, simulate_fc_zoh

__version__ = "0.1.0"

__all__ = [
    "AllStartsFailed",
    "ConfigError",
    "FunnelLevel",
    "FunnelMPCError",
    "FunnelSpec",
    "FunnelViolation",
    "InfeasibleInitialPoint",
    "MassOnCar",
    "MassOnCarParams",
    "MpcConfig",
    "NonFiniteState",
    "ReferenceSignal",
    "SimRecord",
    "SolverStalled",
    "StageCost",
    "error_cascade",
    "funnel_control",
    "performance_measure",
    "run_funnel_mpc",
    "simulate_fc_continuous",
    "simulate_fc_zoh",
    "solve_ocp",
    "theta",
]
