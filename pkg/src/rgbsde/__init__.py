"""Lattice G-expectation, G-BSDE and reflected G-BSDE (upper obstacle) solvers."""

__version__ = "0.1.0"

from .core_model import (BoundaryMode, CheckResult, DiagnosticsReport, LatticeSurface, ProblemSpec,
                         SpatialLattice, TimeGrid, VolatilityBand, build_grid, validate_spec)
from .sublinear import (conditional_g_expectation, conditional_g_expectations, g_expectation, one_step_sup,
                        stencil_weights)
from .bsde import GBsdeSolution, GridRefinementError, PicardError, SpecError, girsanov_expectation, solve_gbsde
from .reflected import (PenalizationReport, PenalizedSolution, ReflectedSolution, martingale_condition_check,
                        monotonicity_check, rate_study, report_monotonicity, skorokhod_check, solve_penalized,
                        solve_reflected)
from .pde_oracle import optimal_stopping_oracle, solve_obstacle_fd, solve_penalized_fd
from .comparison import (LinearCoefficients, SubmartingalePerturbation, linearized_duality_check,
                         submartingale_integral_check, variant_compare)
from .montecarlo import VolatilityPolicy, simulate_policy_value, sup_over_policies

__all__ = [
    "BoundaryMode", "CheckResult", "DiagnosticsReport", "LatticeSurface", "ProblemSpec", "SpatialLattice", "TimeGrid",
    "VolatilityBand", "build_grid", "validate_spec",
    "conditional_g_expectation", "conditional_g_expectations", "g_expectation", "one_step_sup", "stencil_weights",
    "GBsdeSolution", "GridRefinementError", "PicardError", "SpecError", "girsanov_expectation", "solve_gbsde",
    "PenalizationReport", "PenalizedSolution", "ReflectedSolution", "martingale_condition_check",
    "monotonicity_check", "rate_study", "report_monotonicity", "skorokhod_check", "solve_penalized",
    "solve_reflected",
    "optimal_stopping_oracle", "solve_obstacle_fd", "solve_penalized_fd",
    "LinearCoefficients", "SubmartingalePerturbation", "linearized_duality_check", "submartingale_integral_check",
    "variant_compare",
    "VolatilityPolicy", "simulate_policy_value", "sup_over_policies",
]
