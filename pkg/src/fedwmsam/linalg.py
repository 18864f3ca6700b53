"""Flat float64 vector arithmetic shared by the optimizers and oracles.

Parameter, gradient, momentum and correction vectors are all plain 1-D
``numpy.ndarray`` objects of dtype float64.  The helpers here validate
dimensions and finiteness at the public boundary; inner loops elsewhere use
numpy directly and check finiteness once per client update.
"""
from __future__ import annotations

import numpy as np

EPS_ZERO = 1e-12


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Return ``x`` as a contiguous 1-D float64 array, checking dimension and finiteness."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionError(f"expected dimension {dim}, got {v.shape[0]}")
    check_finite(v)
    return v


def check_finite(v: np.ndarray, what: str = "vector") -> np.ndarray:
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"non-finite entries in {what}")
    return v


def zeros(dim: int) -> np.ndarray:
    return np.zeros(dim, dtype=np.float64)


def _same_dim(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise DimensionError(f"dimension mismatch: {x.shape} vs {y.shape}")


def axpy(a: float, x, y) -> np.ndarray:
    """Return ``a * x + y``."""
    if not np.isfinite(a):
        raise NonFiniteError("scale must be finite")
    x = as_vector(x)
    y = as_vector(y)
    _same_dim(x, y)
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * x + y
    return check_finite(out, "axpy result")


def norm2(x) -> float:
    x = as_vector(x)
    return float(np.sqrt(np.dot(x, x)))


def cosine_sim(a, b) -> float:
    """Cosine similarity, defined as 0 when either vector has norm below ``EPS_ZERO``."""
    a = as_vector(a)
    b = as_vector(b)
    _same_dim(a, b)
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na < EPS_ZERO or nb < EPS_ZERO:
        return 0.0
    c = float(np.dot(a, b) / (na * nb))
    # rounding can push |c| a hair above 1
    return min(1.0, max(-1.0, c))
