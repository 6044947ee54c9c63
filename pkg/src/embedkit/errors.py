"""Exception types shared across embedkit.

The CLI maps these onto process exit codes, so every failure raised by the
library should derive from one of them.
"""


class EmbedkitError(Exception):
    exit_code = 1


class ConfigError(EmbedkitError):
    exit_code = 2


class DataError(EmbedkitError, ValueError):
    exit_code = 3


class ParameterError(EmbedkitError, ValueError):
    exit_code = 2


class DimensionError(EmbedkitError, ValueError):
    exit_code = 3


class ContractError(EmbedkitError, RuntimeError):
    exit_code = 1


class NumericError(EmbedkitError, FloatingPointError):
    exit_code = 4


class OverflowRangeError(NumericError):
    """Values do not fit the target floating point format."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)
