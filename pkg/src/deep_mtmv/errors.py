"""Exception hierarchy shared by every module in the package."""


class MTMVError(Exception):
    """Base class for all package errors."""


class DimensionError(MTMVError, ValueError):
    pass


class ConfigurationError(MTMVError, ValueError):
    """Invalid configuration value. ``key`` names the offending field when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ValidationError(MTMVError, ValueError):
    pass


class UsageError(MTMVError):
    pass


class NumericError(MTMVError, ArithmeticError):
    pass


class StructuralError(MTMVError):
    pass


class TrainingError(MTMVError):
    """Raised when training diverges; carries the last finite loss seen."""

    def __init__(self, message, last_finite_loss=None):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss


class FormatError(MTMVError):
    """Malformed file on disk. ``path`` is the offending file."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class StatisticsError(MTMVError, ValueError):
    pass
