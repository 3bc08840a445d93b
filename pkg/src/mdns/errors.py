"""Exception and warning types raised by :mod:`mdns`."""


class MdnsError(Exception):
    """Base class for all library errors."""


class ValidationError(MdnsError, ValueError):
    """Invalid input or configuration."""


class DuplicateSite(ValidationError):
    pass


class MissingElevation(ValidationError):
    pass


class RankDeficient(ValidationError):
    pass


class KTooLarge(ValidationError):
    pass


class MTooSmall(ValidationError):
    pass


class UnknownStationId(ValidationError):
    pass


class NegativeValueUnderSqrt(ValidationError):
    pass


class ParseError(ValidationError):
    """Malformed input file; ``line`` is 1-based and includes the header."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class NumericalError(MdnsError, ArithmeticError):
    """Base class for numerical failures (CLI exit status 3)."""


class NotPositiveDefinite(NumericalError):
    def __init__(self, message="matrix is not positive definite", day=None):
        self.day = day
        if day is not None:
            message = f"{message} (day index {day})"
        super().__init__(message)


class SingularSystem(NumericalError):
    pass


class NoImprovement(NumericalError):
    pass


class NotNested(MdnsError):
    pass


class DayTooSmall(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class MdnsWarning(UserWarning):
    """Numerical diagnostics that do not stop a computation."""


class BudgetExhausted(MdnsWarning):
    """An optimizer hit its evaluation budget; the best point so far is kept."""
