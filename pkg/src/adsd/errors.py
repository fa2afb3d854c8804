"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage/config errors exit 1, data and
format errors exit 2.
"""


class AdsdError(Exception):
    """Base class for all package errors."""


class ShapeError(AdsdError, ValueError):
    """Tensor dimensions are incompatible with the requested operation."""


class ConfigError(AdsdError, ValueError):
    """An architecture, training or CLI configuration is invalid."""


class UsageError(AdsdError, RuntimeError):
    """An API was called in a state where it is not allowed."""


class DataError(AdsdError, ValueError):
    """Input data violates its contract (labels out of range, empty sets, ...)."""


class FormatError(DataError):
    """A serialized file is malformed. ``field`` names the offending part."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


class NumericalError(AdsdError, FloatingPointError):
    """A computation produced NaN or Inf."""
