"""Penalty and regularization solvers for optimal-switching systems."""

from .core import (
    AffineSystem,
    MonotoneSystem,
    PenalizedProblem,
    PenaltyFunction,
    RegimeField,
    ShiftedSystem,
    SolveReport,
    SwitchingCostMatrix,
    a_priori_bound,
    as_costs,
    intervention,
    penalized_residual,
    penalized_slant,
    qvi_residual,
    sup_norm,
)
from .experiments import (
    CASES,
    ExperimentConfig,
    RegionReport,
    TableResult,
    extract_regions,
    run_table,
    verify,
    write_table,
)
from .newton import (
    MaxIterExceeded,
    NewtonConfig,
    ObstacleProblem,
    SingularSlant,
    linear_solve,
    solve_obstacle,
    solve_penalized,
    solve_root,
)
from .pde import PdeParams, RewardFunction, assemble, grid, probe_index, reward_values
from .regularize import (
    ErrorConstants,
    GapBoundViolation,
    HjbResult,
    NonMonotoneSweep,
    apply_Q,
    apply_Q_rho,
    apply_T,
    apply_T_rho,
    estimate_C,
    hjb_limit_solve,
    iterate_to_fixed_point,
    penalty_error_bound,
    phi_minimize,
    phi_upper_bound,
    strict_supersolution,
    zero_cost_gap_bound,
)

__version__ = "0.1.0"

__all__ = [
    "AffineSystem",
    "MonotoneSystem",
    "PenalizedProblem",
    "PenaltyFunction",
    "RegimeField",
    "ShiftedSystem",
    "SolveReport",
    "SwitchingCostMatrix",
    "a_priori_bound",
    "as_costs",
    "intervention",
    "penalized_residual",
    "penalized_slant",
    "qvi_residual",
    "sup_norm",
    "PdeParams",
    "RewardFunction",
    "assemble",
    "grid",
    "probe_index",
    "reward_values",
    "MaxIterExceeded",
    "NewtonConfig",
    "ObstacleProblem",
    "SingularSlant",
    "linear_solve",
    "solve_obstacle",
    "solve_penalized",
    "solve_root",
    "ErrorConstants",
    "GapBoundViolation",
    "HjbResult",
    "NonMonotoneSweep",
    "apply_Q",
    "apply_Q_rho",
    "apply_T",
    "apply_T_rho",
    "estimate_C",
    "hjb_limit_solve",
    "iterate_to_fixed_point",
    "penalty_error_bound",
    "phi_minimize",
    "phi_upper_bound",
    "strict_supersolution",
    "zero_cost_gap_bound",
    "CASES",
    "ExperimentConfig",
    "RegionReport",
    "TableResult",
    "extract_regions",
    "run_table",
    "verify",
    "write_table",
]
