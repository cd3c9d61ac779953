"""Exception types shared across the toolkit."""


class ConfigurationError(ValueError):
    """Invalid parameters, mismatched dimensions, or malformed config input."""


class SingularityError(ValueError):
    """Evaluation at a singular point of a kernel (e.g. Green function at x == y)."""


class ExplosionError(RuntimeError):
    """Branching-process guard tripped: expected offspring per step too large."""


class UnderpoweredError(RuntimeError):
    """Too many censored trials for a meaningful estimate."""
