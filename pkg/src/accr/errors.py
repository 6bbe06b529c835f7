"""Exception types shared across the package."""


class AccrError(Exception):
    """Base class for all package-specific errors."""


class DataIngestError(AccrError, OSError):
    """Raised when a raw data file is missing or corrupt. Message names the file."""


class ShapeError(AccrError, ValueError):
    """Raised when an array or tensor has an incompatible shape."""


class ConfigError(AccrError, ValueError):
    """Raised when a configuration value is missing or inconsistent."""


class ValidationError(AccrError, ValueError):
    """Raised when an argument fails precondition validation."""


class NumericError(AccrError, ArithmeticError):
    """Raised when a computation produces non-finite values."""


class NonFiniteLossError(NumericError):
    """Raised when a training step produces a non-finite loss.

    Carries the diagnostic ``report`` of all loss terms at the failing step.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
