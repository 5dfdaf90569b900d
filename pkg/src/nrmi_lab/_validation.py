"""Input-validation helpers shared by the estimator facade, the CLI, and the core types."""

from __future__ import annotations

import numbers

import numpy as np


class NumericalError(RuntimeError):
    """Raised when a numerical routine cannot produce a trustworthy result
    (mode bracketing failure, infeasible truncation, inconsistent moment)."""


def as_sample_array(x, name="sample"):
    """Coerce ``x`` to a 1-D float64 array of finite values.

    Accepts lists, 1-D arrays, or (n, 1) column arrays. Raises ValueError on
    empty input, NaN/inf entries, or higher-dimensional data.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty sample")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite real, got {value!r}")
    return float(value)


def check_nonnegative(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a nonnegative finite real, got {value!r}")
    return float(value)


def check_open_unit(value, name):
    """Require value strictly inside (0, 1)."""
    v = float(value)
    if not (0.0 < v < 1.0):
        raise ValueError(f"{name} must lie strictly in (0, 1), got {value!r}")
    return v


def check_level_pair(alpha, beta):
    a, b = float(alpha), float(beta)
    if not (0.0 <= a < b <= 1.0):
        raise ValueError(f"need 0 <= alpha < beta <= 1, got ({alpha!r}, {beta!r})")
    return a, b


def check_positive_int(value, name):
    if not isinstance(value, numbers.Integral) or value <= 0:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_rng(random_state):
    """Return a numpy Generator from None, an int seed, or a Generator."""
    if random_state is None:
        return np.random.default_rng()
    if isinstance(random_state, np.random.Generator):
        return random_state
    if isinstance(random_state, (int, np.integer, np.random.SeedSequence)):
        return np.random.default_rng(random_state)
    raise ValueError(f"cannot build a Generator from {random_state!r}")
