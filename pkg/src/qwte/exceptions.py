"""Exception hierarchy shared by all modules."""


class QwteError(Exception):
    """Base class for every error raised by this package."""


class DomainError(QwteError, ValueError):
    """An argument lies outside the domain of the operation."""


class ValidityError(QwteError, ValueError):
    """A model hypothesis (e.g. nonnegative atom mass) is violated."""


class AccuracyError(QwteError, ArithmeticError):
    """A quadrature or series could not reach the requested accuracy.

    Parameters
    ----------
    message : str
    estimate : float, optional
        Best value obtained before giving up.
    error : float, optional
        Achieved error estimate.
    """

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class RangeError(QwteError, ArithmeticError):
    """A functional diverges or a scan fails to settle."""


class DegeneracyError(QwteError, ArithmeticError):
    """The (bordered) Newton matrix is numerically singular."""


class DivergenceError(QwteError, ArithmeticError):
    """Newton iteration failed to converge; carries the best iterate."""

    def __init__(self, message, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report


class StiffnessError(QwteError, ArithmeticError):
    """Adaptive step size collapsed; carries the last accepted state."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class FitError(QwteError, ValueError):
    """A least-squares fit cannot be performed on the requested window."""


class FormatError(QwteError, ValueError):
    """A profile file is malformed, truncated or of an unsupported version."""
