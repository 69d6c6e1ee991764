"""Exception types shared across the package."""


class DipError(Exception):
    """Base class for all package errors."""


class ShapeError(DipError, ValueError):
    pass


class OrientationError(ShapeError):
    """A matrix with more rows than columns was passed where rows <= cols is required."""


class DomainError(DipError, ValueError):
    pass


class RangeError(DipError, ValueError):
    pass


class DegeneracyError(DipError, ArithmeticError):
    """Singular values are too close for the analytic gradient to exist.

    ``gap`` holds the offending relative gap.
    """

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class UndefinedMetricError(DipError, ArithmeticError):
    pass


class IntegrityError(DipError):
    """Checkpoint content does not match the supplied initialization."""


class ConfigError(DipError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
