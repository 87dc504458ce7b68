"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps these onto exit codes: validation 2, I/O 3, numeric 4.
"""


class MCUAError(Exception):
    exit_code = 1


class ValidationError(MCUAError, ValueError):
    exit_code = 2


class DimensionError(ValidationError):
    pass


class NoContextError(ValidationError):
    """A context model found no in-grid pattern placement for an image."""


class DataIOError(MCUAError, OSError):
    exit_code = 3


class NumericError(MCUAError, ArithmeticError):
    exit_code = 4


class TapeError(MCUAError, RuntimeError):
    exit_code = 4
