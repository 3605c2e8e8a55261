"""Exception types shared across the package."""


class QCouplingError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(QCouplingError, ValueError):
    """Malformed or contract-violating input (CLI exit code 2)."""


class NonErgodicError(InvalidInputError):
    """Chain fails irreducibility and/or aperiodicity; message names the failed property."""


class GuardExceededError(QCouplingError, RuntimeError):
    """A resource guard (state count, exact-mode size, search cap) was exceeded (CLI exit code 3)."""


class ThresholdNotReachedError(QCouplingError, RuntimeError):
    """A threshold search (t_couple, t_mix) did not resolve within the computed range."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
