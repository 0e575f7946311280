"""Exception hierarchy shared by all modules."""


class ExtremeDepError(Exception):
    """Base class for all errors raised by the package."""


class InputError(ExtremeDepError, ValueError):
    """Invalid user-supplied data (malformed file, non-finite entry, bad dims)."""


class ParseError(InputError):
    """A data file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeError(InputError):
    """Array dimensions are inconsistent."""


class ConvergenceError(ExtremeDepError, RuntimeError):
    """An iterative solver hit its iteration budget.

    Attributes
    ----------
    residual : float
        Final L1 marginal residual (or gradient norm for outer loops).
    iterations : int
    temperature : float or None
        Set when raised from inside a temperature sweep.
    """

    def __init__(self, message, residual=float("nan"), iterations=0, temperature=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.temperature = temperature


class UndefinedIndexError(ExtremeDepError, ValueError):
    """Dependence index requested for a zero affinity matrix."""


class SingularCovarianceError(ExtremeDepError, ValueError):
    """Covariance too close to singular for the closed-form allocation."""


class InfeasibleGuessError(ExtremeDepError, ValueError):
    """A cross-correlation guess implies a target outside the covariance set."""
