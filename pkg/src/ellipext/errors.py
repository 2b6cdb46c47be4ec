"""Exception hierarchy shared by all modules."""


class EllipextError(Exception):
    """Base class for every error raised by the package."""


class DomainError(EllipextError, ValueError):
    """A domain, mesh or sample set does not satisfy an operation's precondition."""


class ParameterError(EllipextError, ValueError):
    """A scalar parameter is outside its admissible range."""


class StencilError(DomainError):
    """A finite-difference stencil leaves the domain."""


class EllipticityError(EllipextError, ValueError):
    """Coefficients violate uniform ellipticity or the declared bounds."""


class AdmissibilityError(EllipextError, ValueError):
    """A function violates the boundary conditions an extension operator needs.

    ``residual`` holds the measured violation.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(EllipextError, RuntimeError):
    """An iteration failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularJacobianError(ConvergenceError):
    """A Jacobian became numerically singular during Newton iteration."""


class MonotonicityError(EllipextError, RuntimeError):
    """A Perron sweep decreased the current subfunction."""


class ScenarioError(EllipextError, ValueError):
    """A scenario file failed to parse or validate."""
