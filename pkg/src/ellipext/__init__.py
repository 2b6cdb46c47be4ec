"""Elliptic operators, sup-norm preserving extension operators and a
desk-scale Dirichlet solver stack.
"""

from .elliptic_op import (
    EllipticOperator,
    build_barrier,
    build_comparison_pair,
    dissipativity_margin,
    interior_sup_bound,
    max_principle_check,
    verify_ellipticity,
)
from .errors import (
    AdmissibilityError,
    ConvergenceError,
    DomainError,
    EllipextError,
    EllipticityError,
    MonotonicityError,
    ParameterError,
    ScenarioError,
    SingularJacobianError,
    StencilError,
)
from .extension import (
    Seam,
    build_partition,
    common_delta,
    disk_atlas,
    extend_1d,
    extend_global,
    extend_halfspace,
    reflection_delta,
    reflection_function,
    verify_extension_smoothness,
)
from .fields import (
    DomainSpec,
    GridFunction,
    ScalarField,
    holder_seminorm,
    mollifier,
    mollify,
    sup_norm,
    weighted_holder_seminorm,
    weighted_interior_norm,
)
from .solver import (
    boundary_attainment_check,
    direct_solve,
    evolve,
    harmonic_lift,
    perron_solve,
    resolvent_solve,
)
from .transform import (
    Diffeomorphism,
    build_flattening_map,
    invert_at,
    pullback,
    pushforward_operator,
    verify_no_cross_terms,
)

__version__ = "0.1.0"
