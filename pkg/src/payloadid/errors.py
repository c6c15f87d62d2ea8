"""Exception types shared across the package.

The CLI maps these to distinct exit codes (config 2, data 3, numerical 4).
"""


class PayloadIdError(Exception):
    """Base class for all package errors."""


class ConfigError(PayloadIdError):
    """Invalid or inconsistent configuration input."""


class DataError(PayloadIdError):
    """Missing, malformed, or insufficient data."""


class NumericalError(PayloadIdError):
    """A numerical procedure failed (ill-conditioning, divergence, ...)."""


class RankDeficiencyError(NumericalError):
    """Normal matrix of a least-squares system is singular or near-singular.

    `direction` holds the unit 4-vector of parameter space that the system
    cannot observe (right singular vector of the smallest singular value).
    """

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class ConvergenceError(NumericalError):
    """An iterative solve exhausted its iteration budget."""
