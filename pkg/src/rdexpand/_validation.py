"""Input validation helpers and the package exception hierarchy."""

import numbers

import numpy as np


class ConfigurationError(ValueError):
    """Invalid experiment or model configuration.

    ``errors`` lists every violation found, each prefixed by its field path.
    """

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors else [message]


class PreconditionError(ValueError):
    """An operation was called outside its domain of validity."""


class ConvergenceError(RuntimeError):
    """An iterative estimate failed to converge within its budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StateError(RuntimeError):
    """An estimator or stack was used before the data it needs exists."""


class FeasibilityError(ValueError):
    """A block decomposition cannot be realised with the requested parameters."""


class OutOfScopeWarning(UserWarning):
    pass


def check_probabilities(probabilities, n_symbols=None, atol=1e-12):
    p = np.asarray(probabilities, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ConfigurationError("probabilities must be a non-empty 1-d sequence")
    if n_symbols is not None and p.size != n_symbols:
        raise ConfigurationError(
            f"probabilities has {p.size} entries but the alphabet has {n_symbols} symbols"
        )
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise ConfigurationError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > atol:
        raise ConfigurationError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def check_positive_int(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_twists(t, bound=1.0):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(np.abs(t) > bound + 1e-15):
        raise ValueError(f"twist parameters must lie in [-{bound}, {bound}]")
    return t


def check_grid_compatible(a, b):
    if a.shape != b.shape:
        raise ValueError(f"grid mismatch: {a.shape} vs {b.shape}")
