"""Typed failures shared by every module."""


class OpenHallError(Exception):
    """Base class for all library errors."""


class ValidationError(OpenHallError, ValueError):
    """An input violates a documented precondition."""


class ConfigError(ValidationError):
    """A run configuration is malformed; ``key`` names the offending field."""

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class DegeneratePoint(OpenHallError, ArithmeticError):
    """A band touching (or vanishing gap) at a momentum point."""

    def __init__(self, message, k=None):
        self.k = k
        super().__init__(message)


class SolverError(OpenHallError, ArithmeticError):
    """A dense linear-algebra step did not produce a valid answer."""


class NonUniqueResponse(SolverError):
    """The first-order system is singular beyond the expected null space."""

    def __init__(self, message, null_dimension):
        self.null_dimension = null_dimension
        super().__init__(f"{message} (null dimension {null_dimension})")


class ConvergenceError(OpenHallError, ArithmeticError):
    """A refinement loop stopped before meeting its tolerance."""

    def __init__(self, message, history=()):
        self.history = list(history)
        super().__init__(message)


class ResolutionError(ConvergenceError):
    """A lattice invariant is not resolved on the requested grid."""
