"""Symplectic Runge-Kutta integration of index-1 constrained Hamiltonian systems."""

from .core import (
    DarbouxDims,
    HamiltonianSystem,
    IndexOneSystem,
    PhaseState,
    StructureMatrix,
    finite_difference_gradient,
    index_one_certificate,
    solve_dense_linear,
)
from .diagnostics import (
    ConvergenceReport,
    SymplecticityReport,
    constraint_audit,
    energy_error_series,
    estimate_order,
    flow_map_jacobian,
    symplecticity_defect,
)
from .errors import (
    ConfigError,
    EvaluationError,
    IndexOneError,
    IndexViolationError,
    ProjectionError,
    RankDeficiencyError,
    SingularMatrixError,
    StepFailureError,
)
from .integrators import (
    ButcherTableau,
    SolverConfig,
    Trajectory,
    gauss_tableau,
    integrate,
    rattle_step,
    srk_step,
    symplecticity_residual,
)
from .problems import (
    VehicleParams,
    heisenberg_named_state,
    heisenberg_problem,
    particle_on_circle_problem,
    vehicle_named_state,
    vehicle_problem,
)
from .vakonomic import VakonomicProblem, build_system, legendre, solve_multipliers, velocity

__version__ = "0.1.0"

__all__ = [
    "ButcherTableau",
    "ConfigError",
    "ConvergenceReport",
    "DarbouxDims",
    "EvaluationError",
    "HamiltonianSystem",
    "IndexOneError",
    "IndexOneSystem",
    "IndexViolationError",
    "PhaseState",
    "ProjectionError",
    "RankDeficiencyError",
    "SingularMatrixError",
    "SolverConfig",
    "StepFailureError",
    "StructureMatrix",
    "SymplecticityReport",
    "Trajectory",
    "VakonomicProblem",
    "VehicleParams",
    "build_system",
    "constraint_audit",
    "energy_error_series",
    "estimate_order",
    "finite_difference_gradient",
    "flow_map_jacobian",
    "gauss_tableau",
    "heisenberg_named_state",
    "heisenberg_problem",
    "index_one_certificate",
    "integrate",
    "legendre",
    "particle_on_circle_problem",
    "rattle_step",
    "solve_dense_linear",
    "solve_multipliers",
    "srk_step",
    "symplecticity_defect",
    "symplecticity_residual",
    "vehicle_named_state",
    "vehicle_problem",
    "velocity",
]
