"""Numeric primitives shared by the rest of the package.

Everything here is a pure function on float64 numpy arrays.
"""

from __future__ import annotations

import math

import numpy as np

UINT64_MAX = 2**64 - 1


class InvalidArgumentError(ValueError):
    """Raised when an input violates an operation's preconditions."""


class CapacityError(RuntimeError):
    """Raised when a computation would exceed a configured or native limit."""


def as_vector(values, name: str = "values") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidArgumentError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def softmax(values, temperature: float = 1.0) -> np.ndarray:
    """Numerically stable softmax of a 1-D vector.

    >>> softmax([0.0, 0.0, 0.0]).tolist()
    [0.3333333333333333, 0.3333333333333333, 0.3333333333333333]
    """
    x = as_vector(values)
    if not (math.isfinite(temperature) and temperature > 0):
        raise InvalidArgumentError(f"temperature must be positive and finite, got {temperature}")
    z = (x - x.max()) / temperature
    e = np.exp(z)
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax for a 2-D array (no validation, internal hot path)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def top_n_indices(scores, n: int) -> tuple[int, ...]:
    """Indices of the ``n`` largest scores, returned in increasing index order.

    Ties go to the smaller index, so the result is fully deterministic.
    """
    s = as_vector(scores, "scores")
    if not isinstance(n, (int, np.integer)) or n < 1 or n > s.size:
        raise InvalidArgumentError(f"n must satisfy 1 <= n <= {s.size}, got {n}")
    # stable sort on -s keeps the smaller index first among equal scores
    order = np.argsort(-s, kind="stable")
    return tuple(sorted(int(i) for i in order[:n]))


def binomial(t: int, n: int) -> int:
    """Exact C(t, n); raises CapacityError if it does not fit in 64 unsigned bits."""
    if t < 0 or n < 0 or n > t:
        raise InvalidArgumentError(f"binomial requires 0 <= n <= t, got t={t}, n={n}")
    value = math.comb(t, n)
    if value > UINT64_MAX:
        raise CapacityError(f"binomial({t}, {n}) overflows a 64-bit unsigned integer")
    return value


def validate_index_set(indices, length: int) -> tuple[int, ...]:
    """Check that ``indices`` is strictly increasing and within ``[0, length)``."""
    idx = tuple(int(i) for i in indices)
    if not idx:
        raise InvalidArgumentError("index set must not be empty")
    if idx[0] < 0 or idx[-1] >= length:
        raise InvalidArgumentError(f"indices {idx} out of range for length {length}")
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise InvalidArgumentError(f"indices {idx} must be strictly increasing")
    return idx
