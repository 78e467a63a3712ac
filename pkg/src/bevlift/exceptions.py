"""Exception hierarchy. Each family maps to one CLI exit code."""


class BevliftError(Exception):
    exit_code = 1


class ConfigError(BevliftError, ValueError):
    exit_code = 2


class DataError(BevliftError, ValueError):
    exit_code = 3


class InvalidCalibrationError(DataError):
    pass


class InvalidStatsError(DataError):
    pass


class ShapeError(DataError):
    pass


class NumericalError(BevliftError, ArithmeticError):
    exit_code = 4


class PipelineError(BevliftError):
    """Wraps a failure with the name of the stage that raised it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
        super().__init__(f"stage '{stage}' failed: {cause}")
