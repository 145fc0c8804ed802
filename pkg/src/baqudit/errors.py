"""Exception hierarchy; each class maps to a CLI exit code."""


class BaquditError(Exception):
    exit_code = 1


class ConfigError(BaquditError, ValueError):
    """Malformed or inconsistent user input."""

    exit_code = 2


class NumericalError(BaquditError, ArithmeticError):
    """A numerical routine failed or produced an untrustworthy result."""

    exit_code = 3


class TrackingError(NumericalError):
    """Adiabatic level tracking lost a level."""


class AmbiguityError(NumericalError):
    """An estimator could not resolve a unique answer (e.g. phase wrap)."""


class InfeasibleError(BaquditError):
    """The requested problem has no admissible solution."""

    exit_code = 4
