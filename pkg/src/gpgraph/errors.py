"""Exception types raised across the package."""


class GPGraphError(Exception):
    """Base class for all package errors."""


class DimensionError(GPGraphError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(GPGraphError, ValueError):
    """A hyperparameter or configuration value is invalid."""


class PartitionError(GPGraphError, ValueError):
    """A group partition is empty, overlapping, or does not cover its universe."""


class AlignmentError(GPGraphError, ValueError):
    """Two inputs that must describe the same pedestrians do not."""


class NumericError(GPGraphError, ArithmeticError):
    """A non-finite value appeared in a computation."""


class DatasetParseError(GPGraphError, ValueError):
    """A trajectory or label file is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DatasetFormatError(GPGraphError, ValueError):
    """A trajectory file parses but violates a structural rule (e.g. frame stride)."""


class UsageError(GPGraphError, ValueError):
    """Invalid combination of options."""
