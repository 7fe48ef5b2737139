"""Lattice solvers for infinite-horizon multi-mode reflected BSDEs with oblique
reflection, and the optimal switching problems they represent."""

from .bsde import BsdeField, InnerIterationError, StepSizeError, solve_bsde
from .config import RunConfig, load_preset, preset_names
from .coupling import ConvergenceError, apply_phi, contraction_probe, fixed_point_solve, weighted_norm
from .lattice import (BINOMIAL, DETERMINISTIC, TRINOMIAL, Lattice, StateModelSpec, TimeGrid, build_lattice,
                      cond_expect, cond_expect_with_increment, truncate_horizon)
from .problem import (AssumptionError, DriverSpec, LipschitzModulus, ModeSet, SwitchingCostSpec,
                      SwitchingProblem, ValidationReport, required_discount, validate_assumptions)
from .reflect import (PENALIZATION, PROJECTION, ProjectionError, SolutionField, obstacle_violation,
                      penalty_decay_check, skorokhod_residual, solve_penalized, solve_reflected)
from .registry import ConfigError
from .switching import (FeedbackStrategy, Strategy, cost_process, eval_strategy, oracle_value,
                        random_strategies, representation_check, state_process)

__version__ = "0.1.0"

__all__ = [
    "AssumptionError", "BINOMIAL", "BsdeField", "ConfigError", "ConvergenceError", "DETERMINISTIC",
    "DriverSpec", "FeedbackStrategy", "InnerIterationError", "Lattice", "LipschitzModulus", "ModeSet",
    "PENALIZATION", "PROJECTION", "ProjectionError", "RunConfig", "SolutionField", "StateModelSpec",
    "StepSizeError", "Strategy", "SwitchingCostSpec", "SwitchingProblem", "TRINOMIAL", "TimeGrid",
    "ValidationReport", "apply_phi", "build_lattice", "cond_expect", "cond_expect_with_increment",
    "contraction_probe", "cost_process", "eval_strategy", "fixed_point_solve", "load_preset",
    "obstacle_violation", "oracle_value", "penalty_decay_check", "preset_names", "random_strategies",
    "representation_check", "required_discount", "skorokhod_residual", "solve_bsde", "solve_penalized",
    "solve_reflected", "state_process", "truncate_horizon", "validate_assumptions", "weighted_norm",
]
