"""Exception hierarchy.

The CLI maps these onto exit codes: configuration/parameter problems exit
with 2, data problems with 3 and numerical failures with 4.
"""


class SubPoissonError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(SubPoissonError, ValueError):
    """A model parameter lies outside its admissible domain."""


class TruncationError(SubPoissonError, ValueError):
    """A truncation bound does not capture the requested probability mass."""

    def __init__(self, message, suggested_bound=None):
        super().__init__(message)
        self.suggested_bound = suggested_bound


class DimensionError(SubPoissonError, ValueError):
    """Array shapes of two operands are incompatible."""


class ConditioningError(SubPoissonError, ValueError):
    """Conditioning on an event of (numerically) zero probability."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class UndefinedValueError(SubPoissonError, ValueError):
    """A quantity is undefined for the given input (e.g. a zero mean)."""


class InapplicableCriterionError(UndefinedValueError):
    """A criterion cannot be evaluated because its normalisers vanish."""


class ModelMismatchError(SubPoissonError):
    """The model assigns zero probability to observed data."""


class NumericalError(SubPoissonError, ArithmeticError):
    """A numerical scheme failed its own accuracy check."""


class FitFailure(NumericalError):
    """Every start of a parameter fit stagnated."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(ParameterDomainError):
    """A configuration file is missing, malformed or inconsistent."""


class DataError(SubPoissonError, ValueError):
    """An input data file is missing or malformed."""
