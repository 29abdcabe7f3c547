class FriendBoundsError(Exception):
    """Base class for all package errors."""


class DataError(FriendBoundsError, ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(FriendBoundsError, ValueError):
    """Invalid run configuration."""


class EstimationError(FriendBoundsError, RuntimeError):
    """An estimator could not produce a result."""


class RankDeficiencyError(EstimationError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class SeparationError(EstimationError):
    """Perfect or quasi-perfect separation in a binary-response fit."""


class ConvergenceError(EstimationError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
