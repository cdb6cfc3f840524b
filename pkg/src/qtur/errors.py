"""Exception hierarchy shared by all qtur modules."""


class QturError(Exception):
    """Base class for every error raised by qtur."""


class ValidationError(QturError, ValueError):
    """An input object is malformed (non-Hermitian, wrong shape, ...)."""


class DimensionMismatchError(ValidationError):
    """Operators of different Hilbert-space dimension were combined."""


class DomainError(QturError, ValueError):
    """A scalar parameter is outside its admissible range."""


class NotFaithfulError(QturError, ValueError):
    """A state has eigenvalues below working precision (not faithful)."""


class PreconditionError(QturError, ValueError):
    """An operation was called on input violating its precondition."""


class TruncationError(QturError, ValueError):
    """A Fock truncation is too small for the requested tolerance.

    The attribute ``suggested_dim`` carries a dimension that would pass.
    """

    def __init__(self, message, suggested_dim=None):
        super().__init__(message)
        self.suggested_dim = suggested_dim


class NonUniqueSteadyStateError(QturError, ValueError):
    """The generator has a degenerate stationary kernel."""


class ConditioningError(QturError, ArithmeticError):
    """A linear solve is singular or too ill-conditioned to trust."""


class ConvergenceError(QturError, RuntimeError):
    """A quadrature or escalation loop hit its cap without converging."""
