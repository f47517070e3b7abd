"""Exception types raised by the training engine.

Each error carries the process exit code the CLI uses when it reaches the top level.
"""


class RouserError(Exception):
    """Base class for every error the engine raises on purpose."""

    exit_code = 1


class ConfigError(RouserError, ValueError):
    """Malformed config line or a hyperparameter that violates its invariant."""

    exit_code = 3

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DataError(RouserError):
    """Unreadable or malformed event data / checkpoint."""

    exit_code = 2


class NumericError(RouserError):
    """Non-finite loss or gradient."""

    exit_code = 4


class ShapeError(RouserError, ValueError):
    """Array shapes that do not line up."""


class PreconditionError(RouserError):
    """An operation was called outside the regime it is defined for."""
