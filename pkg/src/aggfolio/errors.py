"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes: configuration and parameter
problems exit with 1, data problems with 2, invariant violations with 3.
"""


class AggfolioError(Exception):
    exit_code = 1


class ParameterError(AggfolioError, ValueError):
    """An argument is outside its allowed range."""


class CapacityError(ParameterError):
    """A brute-force enumeration would be too large to run."""


class ConfigError(AggfolioError):
    """The experiment configuration is malformed or inconsistent."""


class DataError(AggfolioError, ValueError):
    exit_code = 2


class DomainError(DataError):
    """Non-finite or otherwise meaningless numeric input."""


class ShapeError(DataError):
    """Array dimensions do not line up."""


class UniverseTooSmallError(DataError):
    """Fewer than ten assets are available for a decile sort."""


class NumericalError(AggfolioError, ArithmeticError):
    exit_code = 3


class InvariantViolation(AggfolioError):
    exit_code = 3
