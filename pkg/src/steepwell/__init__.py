"""steepwell: Nehari-branch solvers for indefinite Kirchhoff equations on
steep potential wells.

Layers: grids and coefficient fields (grid), energies and gradients
(functionals), weighted principal eigenpairs (eigen), scalar ray-map
analysis (fibering), branch minimization (solver), regime constants
(thresholds), and the scenario/sweep harness (scenario, cli).
"""

from .grid import (
    CoefficientFields,
    Grid,
    GridFunction,
    ProblemData,
    apply_laplacian,
    build_grid,
    gradient_dot,
    integrate,
    load_grid_function,
    make_well_fields,
    write_field_csv,
)
from .functionals import (
    EnergyBreakdown,
    dirichlet_norm_sq,
    energy,
    energy_gradient,
    mu_norm_sq,
    q_power_term,
    weighted_mass,
)
from .eigen import EigenResult, principal_eig_full, principal_eig_omega, well_convergence_sweep
from .fibering import (
    BranchNotFoundError,
    FiberClass,
    FiberingCoefficients,
    degenerate_params,
    degenerate_point,
    fibering_coeffs,
    h_prime,
    h_second,
    h_value,
    project_to_nehari,
    stationary_points,
)
from .solver import (
    LimitGroundState,
    SolveReport,
    SolverSettings,
    minimize_on_branch,
    solve_limit_problem,
    t_scalings_of_ground_state,
)
from .thresholds import (
    RegimeClassification,
    ThresholdReport,
    compute_thresholds,
    estimate_abar_lambda,
    estimate_gamma0,
    phi1_sign_condition,
    regime_classify,
    t6_gate_multiplier,
)
from .scenario import Scenario, load_scenario, run_scenario, verify_suite

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
