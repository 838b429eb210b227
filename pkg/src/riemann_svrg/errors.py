"""Exception types shared across the package."""


class RiemannSvrgError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(RiemannSvrgError):
    """An API precondition was violated, e.g. mixing tangent vectors
    that live at different base points."""


class NumericError(RiemannSvrgError):
    """A numerical operation left its domain of validity (non-finite
    values, loss of orthonormality beyond repair, ...)."""


class DomainError(RiemannSvrgError):
    """An operation was evaluated outside its mathematical domain,
    e.g. the log map between subspaces with an orthogonal principal
    direction."""


class ConvergenceError(RiemannSvrgError):
    """An iterative solver failed to converge.

    Carries the last iterate so callers can inspect or reuse it.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class ConfigurationError(RiemannSvrgError):
    """An invalid configuration value or combination of values."""


class ParseError(RiemannSvrgError):
    """A data file could not be parsed."""
