"""Exception hierarchy shared by all modules."""


class LossyActError(Exception):
    """Base class for package errors."""


class DomainError(LossyActError, ValueError):
    """Input outside the operation's domain (empty, non-finite, ...)."""


class ShapeError(LossyActError, ValueError):
    pass


class ParameterError(LossyActError, ValueError):
    pass


class DecodeError(LossyActError, ValueError):
    """Corrupt or truncated bitstream, or codebook mismatch."""


class FormatError(LossyActError, ValueError):
    """Bad magic, version, or out-of-range field in a binary file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateFitError(LossyActError, ValueError):
    pass


class ConfigError(LossyActError, ValueError):
    pass


class NumericalAbort(LossyActError, RuntimeError):
    """Training diverged (non-finite loss)."""
