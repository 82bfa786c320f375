"""Exception types shared across the package."""


class TregoError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TregoError, ValueError):
    """Invalid configuration value or unknown identifier."""


class InvalidHyperparameterError(TregoError, ValueError):
    """Kernel or model hyperparameter outside its valid domain."""


class NotFittedError(TregoError, RuntimeError):
    """Operation requires a fitted model."""


class FactorizationError(TregoError, ArithmeticError):
    """Covariance factorization failed, even after jitter escalation."""


class FitError(TregoError, RuntimeError):
    """Every hyperparameter optimization start failed.

    Carries the most informative per-start diagnostic in ``diagnostics``.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class EmptyRegionError(TregoError, ValueError):
    """Search region is empty after intersection with the unit cube."""


class DomainError(TregoError, ValueError):
    """Point lies outside the feasible box of a test problem."""


class AggregationError(TregoError, ValueError):
    """Run records or curves cannot be combined (mismatched problem sets)."""
