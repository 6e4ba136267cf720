"""Exception hierarchy shared across the package."""


class HuffvalError(Exception):
    """Base class for all package errors."""


class SchemaError(HuffvalError):
    """An input table is missing a required column."""

    def __init__(self, missing, source="input"):
        self.missing = list(missing)
        super().__init__(f"{source}: missing required column(s): {', '.join(self.missing)}")


class IntegrityError(HuffvalError):
    """Cross-table references do not line up."""


class ConfigError(HuffvalError, ValueError):
    pass


class DegenerateError(HuffvalError, ValueError):
    """Data is too small or too flat for the requested statistic."""


class InsufficientSampleError(DegenerateError):
    pass


class DegenerateCorrelationError(DegenerateError):
    pass


class UndefinedIndicatorError(DegenerateError):
    pass


class StandardizationError(DegenerateError):
    pass


class SingularDesignError(HuffvalError, ValueError):
    def __init__(self, message, columns=()):
        self.columns = list(columns)
        super().__init__(message)


class InitializationError(HuffvalError, RuntimeError):
    """Every initial particle produced a non-finite objective value."""
