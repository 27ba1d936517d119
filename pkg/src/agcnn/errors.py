"""Exception types shared across the package."""


class AgcnnError(Exception):
    """Base class for all package errors."""


class ConfigError(AgcnnError, ValueError):
    """Layer or model configuration is inconsistent with the data it is given."""


class UsageError(AgcnnError, RuntimeError):
    """An API was called in a state where the call makes no sense."""


class InputError(AgcnnError, ValueError):
    """User supplied data (logs, manifests, files) is malformed or out of range."""


class UndefinedCorrelationError(AgcnnError, ArithmeticError):
    """Pearson correlation requested for an operand with zero variance."""


class UndefinedRateError(AgcnnError, ArithmeticError):
    """A rate metric has an empty denominator."""


class NonFiniteLossError(AgcnnError, FloatingPointError):
    """Training produced a NaN or infinite loss."""
