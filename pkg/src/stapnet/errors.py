"""Exception hierarchy shared across the package.

Every error maps onto one of the CLI exit codes: configuration problems exit
with 2, numeric failures with 3 and I/O / file-format problems with 4.
"""


class StapnetError(Exception):
    exit_code = 1


class ConfigError(StapnetError, ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericError(StapnetError, ArithmeticError):
    exit_code = 3


class SingularityError(NumericError):
    pass


class DomainError(NumericError, ValueError):
    """Input outside the domain of a statistic (zero vectors and the like)."""


class CalibrationError(NumericError):
    pass


class FormatError(StapnetError, IOError):
    """Malformed binary file; ``offset`` is the byte position of the problem."""

    exit_code = 4

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class StageError(StapnetError):
    """Wraps a failure inside one stage of an experiment run."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"stage '{stage}' failed: {cause}")
