"""Flat parameter-vector arithmetic.

Model weights, client deltas, and server optimizer accumulators are all plain
1-D float64 numpy arrays ("param vectors"). All public operations preserve
finiteness and never mutate their inputs.
"""

from __future__ import annotations

import math

import numpy as np

DEFAULT_CLIP_NORM = 20.0


def as_param_vector(values) -> np.ndarray:
    """Coerce to a 1-D float64 array, copying only when needed."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        v = v.reshape(-1)
    return v


def _check_finite(v: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{what} contains non-finite entries")
    return v


def l2_norm(v: np.ndarray) -> float:
    """Euclidean norm, sqrt of the sum of squared entries."""
    v = as_param_vector(v)
    if v.size == 0:
        raise ValueError("l2_norm of an empty vector")
    n = float(np.sqrt(np.dot(v, v)))
    if not math.isfinite(n):
        raise ValueError("l2_norm overflowed to non-finite")
    return n


def clip_by_norm(v: np.ndarray, c: float = DEFAULT_CLIP_NORM) -> np.ndarray:
    """Scale v down so its norm is at most c; below the bound v is returned as-is.

    The rescale loop makes the operation exactly idempotent: float rounding can
    leave the scaled norm a few ulp above c, in which case we shrink again.
    """
    if not c > 0:
        raise ValueError(f"clip norm must be positive, got {c}")
    v = as_param_vector(v)
    n = l2_norm(v)
    while n > c:
        scale = c / n
        if scale >= 1.0:  # c/n rounded up to 1; force a one-ulp shrink
            scale = 1.0 - 2.0 ** -52
        v = v * scale
        n = l2_norm(v)
    return _check_finite(v, "clipped vector")


def axpy(a: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return y + a*x elementwise."""
    x = as_param_vector(x)
    y = as_param_vector(y)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: x has {x.size}, y has {y.size}")
    return _check_finite(y + a * x, "axpy result")
