"""Exception types shared across the package."""


class LbdError(Exception):
    """Base class for all package errors."""


class DimensionError(LbdError, ValueError):
    pass


class ConfigError(LbdError, ValueError):
    pass


class NumericError(LbdError, ArithmeticError):
    pass


class ConsistencyError(LbdError, RuntimeError):
    """A cache or state object no longer matches the model it came from."""


class UnsupportedEstimatorError(LbdError, TypeError):
    pass
