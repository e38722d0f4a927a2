"""Exception hierarchy shared by all modules."""


class VibroError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(VibroError):
    pass


class DataError(VibroError):
    pass


class GeometryError(VibroError, ValueError):
    pass


class OverlapError(GeometryError):
    pass


class ShapeError(VibroError, ValueError):
    pass


class NumericalError(VibroError):
    """Base class for failures of a numerical kernel."""


class SingularError(NumericalError):
    """A factorization met a pivot below tolerance (resonant frequency)."""


class NotPositiveError(NumericalError, ValueError):
    pass


class ConvergenceError(NumericalError):
    pass


class DomainError(NumericalError, ValueError):
    """Parameters left the admissible set (negative kappa_tilde)."""


class SingularNormalEq(NumericalError):
    pass


class NoFeasibleAlpha(NumericalError):
    """No regularization parameter meets the Levenberg-Marquardt band."""


class DegenerateTraceError(NumericalError):
    pass


class MissingSamplesError(NumericalError):
    pass


class BudgetExceeded(VibroError):
    """Iteration budget exhausted before the stopping rule fired.

    Carries the best iterate found and the iteration trace.
    """

    def __init__(self, message, params=None, trace=None):
        super().__init__(message)
        self.params = params
        self.trace = trace
