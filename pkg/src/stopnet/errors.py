"""Exception types. The CLI maps them to exit codes 2 and 3."""


class StopnetError(Exception):
    exit_code = 1


class ConfigError(StopnetError, ValueError):
    """Bad configuration: shapes, unknown keys, unsupported kinds."""

    exit_code = 2


class UsageError(StopnetError, ValueError):
    """A call that violates an operation's precondition."""

    exit_code = 2


class NumericError(StopnetError, ArithmeticError):
    """Non-finite values produced during computation."""

    exit_code = 3

    def __init__(self, message, layer=None, group=None):
        super().__init__(message)
        self.layer = layer
        self.group = group


class ResolutionError(NumericError):
    """HJB characteristic moved more than one grid cell in a single step."""


class DivergenceError(NumericError):
    """Training loss became non-finite; carries the last finite weights."""

    def __init__(self, message, last_good=None, epoch=None):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch
