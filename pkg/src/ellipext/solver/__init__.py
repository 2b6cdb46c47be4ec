"""Direct Dirichlet solves, Perron iteration, resolvents and time stepping."""

from .discrete import (
    DirectSolution,
    Discretization,
    SolveReport,
    comparison_sandwich,
    direct_solve,
)
from .evolution import ResolventResult, Trajectory, evolve, resolvent_solve, semigroup_defect
from .perron import (
    Ball,
    BoundaryReport,
    PerronResult,
    PerronState,
    boundary_attainment_check,
    default_cover,
    external_sphere,
    harmonic_lift,
    perron_solve,
)

__all__ = [
    "Ball", "BoundaryReport", "DirectSolution", "Discretization", "PerronResult", "PerronState",
    "ResolventResult", "SolveReport", "Trajectory", "boundary_attainment_check", "comparison_sandwich",
    "default_cover", "direct_solve", "evolve", "external_sphere", "harmonic_lift", "perron_solve",
    "resolvent_solve", "semigroup_defect",
]
