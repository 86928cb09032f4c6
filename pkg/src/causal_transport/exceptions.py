"""Exception hierarchy shared by every module of the package."""


class TransportError(Exception):
    """Base class for all package errors."""


class UnknownMeasureError(TransportError, KeyError):
    """Raised when a measure identifier is not registered."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DomainError(TransportError, ValueError):
    """An effect measure or effect function was evaluated outside its domain."""


class DerivativeError(DomainError):
    """A partial derivative does not exist at the requested point."""


class DataValidationError(TransportError, ValueError):
    """Observations violate a structural invariant of :class:`StudyData`.

    Parameters
    ----------
    message : str
        Human readable description.
    row : int, optional
        Zero-based data row (excluding the CSV header) that triggered the error.
    """

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class CsvSchemaError(DataValidationError):
    """A column named in the schema is missing from the CSV header."""


class ConvergenceError(TransportError, RuntimeError):
    """An iterative fit did not converge.

    Attributes
    ----------
    trace : list of float
        Gradient max-norm recorded at every iteration.
    """

    def __init__(self, message, trace=None):
        self.trace = list(trace or [])
        super().__init__(message)


class SeparationError(ConvergenceError):
    """Logistic coefficients diverge: the classes are (quasi-)separated."""


class SingularMatrixError(TransportError, ArithmeticError):
    """A design, Hessian or Jacobian matrix is numerically singular."""

    def __init__(self, message, condition_number=None):
        self.condition_number = condition_number
        super().__init__(message)


class OverlapError(TransportError, ValueError):
    """The estimated selection probability vanishes at an evaluation point."""

    def __init__(self, message, point=None):
        self.point = point
        super().__init__(message)


class CapabilityError(TransportError, RuntimeError):
    """The data cannot support the requested estimator."""


class FoldError(TransportError, ValueError):
    """A cross-fitting stratum is too small for the requested number of folds."""


class BootstrapError(TransportError, RuntimeError):
    """Too many bootstrap replicates failed."""

    def __init__(self, message, failures=None):
        self.failures = dict(failures or {})
        super().__init__(message)


class StudyError(TransportError, RuntimeError):
    """A Monte Carlo study exceeded its tolerated failure rate."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)
