"""Exception hierarchy shared by all modules."""


class FusionError(Exception):
    """Base class for every error raised by hsfuse."""


class ValidationError(FusionError, ValueError):
    """Invalid argument or configuration value."""


class DimensionError(ValidationError):
    """Shapes or grids that do not fit together."""


class DegenerateError(ValidationError):
    """Data for which a quantity is undefined (zero mean, zero norm, ...)."""


class NumericalError(FusionError, ArithmeticError):
    """A linear system could not be solved."""


class DivergenceError(NumericalError):
    """The ADMM iteration produced non-finite values."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
