"""Exception types raised across the package."""


class FbmError(Exception):
    """Base class for all package errors."""


class DomainError(FbmError, ValueError):
    """Argument outside the domain of a formula (negative time, s >= t, ...)."""


class RegimeError(FbmError, ValueError):
    """Operation not defined for the given Hurst regime."""


class QuadratureError(FbmError, ArithmeticError):
    """Adaptive quadrature failed to reach its tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class NumericalError(FbmError, ArithmeticError):
    """Generic numerical failure (non-PSD covariance, singular system, ...)."""


class AlignmentError(FbmError, ValueError):
    """Breakpoint does not lie on the path grid."""


class EstimationError(FbmError, ValueError):
    """Hurst estimation on degenerate data."""


class ConvergenceError(FbmError, ArithmeticError):
    """Fixed-point or Newton iteration did not converge."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DimensionError(FbmError, ValueError):
    """Shape mismatch between grid, truncation and coefficient arrays."""


class CapabilityError(FbmError, TypeError):
    """A required derivative evaluator was not supplied."""


class ConsistencyError(FbmError, ValueError):
    """Input violates a structural invariant (e.g. conjugate symmetry)."""


class ConfigError(FbmError, ValueError):
    """Invalid or unknown configuration entry."""
