"""Exception hierarchy. Each family maps onto one CLI exit status."""


class SddGatError(Exception):
    exit_code = 1


class ConfigError(SddGatError, ValueError):
    """Invalid configuration values or input schema."""

    exit_code = 3


class DimensionError(ConfigError):
    """Shapes that do not line up."""


class SchemaError(ConfigError):
    """Input file does not follow the dataset schema."""


class PreprocessingError(ConfigError):
    pass


class SplitError(ConfigError):
    pass


class NumericError(SddGatError, ArithmeticError):
    """Non-finite values or undefined statistics."""

    exit_code = 4


class DegenerateError(NumericError):
    """A statistic is undefined for the given input (zero variance etc)."""


class DivergenceError(NumericError):
    """Training loss blew up. ``params`` holds the last good parameters."""

    def __init__(self, message, params=None, log=None):
        super().__init__(message)
        self.params = params
        self.log = log


class DataIOError(SddGatError, OSError):
    exit_code = 5
