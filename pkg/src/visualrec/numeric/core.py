"""
Dense primitives shared by every model.

Vectors and matrices are float64 numpy arrays. Operations documented as row-wise also accept a
leading batch axis, which is how the models evaluate whole mini-batches at once.
"""

from collections.abc import Callable
from logging import getLogger

import numpy as np
from numpy.typing import ArrayLike, NDArray

from visualrec.exceptions import DimensionMismatchError, NonFiniteError


logger = getLogger(__name__)

FloatArray = NDArray[np.float64]
IndexArray = NDArray[np.int64]
Rng = np.random.Generator


def as_array(x: ArrayLike) -> FloatArray:
    return np.asarray(x, dtype=np.float64)


def ensure_finite(x: FloatArray, what: str = "value") -> FloatArray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}")
    return x


def make_rng(seed: int | list[int] | np.random.SeedSequence) -> Rng:
    """PCG64 generator: identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def dot(a: ArrayLike, b: ArrayLike) -> FloatArray:
    """Inner product over the last axis (a scalar for two vectors)."""
    a_, b_ = as_array(a), as_array(b)
    if a_.shape != b_.shape:
        raise DimensionMismatchError(f"dot: shapes {a_.shape} and {b_.shape} differ")
    return ensure_finite(np.asarray(np.sum(a_ * b_, axis=-1)), "dot product")


def matvec(m: ArrayLike, x: ArrayLike) -> FloatArray:
    """M·x; with a batch of row vectors x (B, cols) returns (B, rows)."""
    m_, x_ = as_array(m), as_array(x)
    if m_.ndim != 2 or x_.shape[-1] != m_.shape[1]:
        raise DimensionMismatchError(f"matvec: matrix {m_.shape} against vector {x_.shape}")
    return ensure_finite(x_ @ m_.T, "matvec")


def affine(w: ArrayLike, x: ArrayLike, b: ArrayLike) -> FloatArray:
    """
    Layer transform W^T x + b with W stored as (in_width, out_width), so the output has the
    length of b.
    """
    w_, x_, b_ = as_array(w), as_array(x), as_array(b)
    if w_.ndim != 2 or x_.shape[-1] != w_.shape[0] or b_.shape != (w_.shape[1],):
        raise DimensionMismatchError(
            f"affine: weights {w_.shape}, input {x_.shape}, bias {b_.shape}"
        )
    return ensure_finite(x_ @ w_ + b_, "affine output")


def relu(x: ArrayLike) -> FloatArray:
    return np.maximum(as_array(x), 0.0)


def relu_mask(activation: FloatArray) -> FloatArray:
    # subgradient at 0 is 0
    return (activation > 0.0).astype(np.float64)


def concat(a: ArrayLike, b: ArrayLike) -> FloatArray:
    a_, b_ = as_array(a), as_array(b)
    if a_.shape[:-1] != b_.shape[:-1]:
        raise DimensionMismatchError(f"concat: batch shapes {a_.shape} and {b_.shape}")
    return np.concatenate([a_, b_], axis=-1)


def hadamard(a: ArrayLike, b: ArrayLike) -> FloatArray:
    a_, b_ = as_array(a), as_array(b)
    if a_.shape != b_.shape:
        raise DimensionMismatchError(f"hadamard: shapes {a_.shape} and {b_.shape} differ")
    return ensure_finite(a_ * b_, "hadamard product")


def init_gaussian(rows: int, cols: int, std: float, rng: Rng) -> FloatArray:
    if std <= 0:
        raise ValueError(f"std must be positive, got {std}")
    return rng.normal(loc=0.0, scale=std, size=(rows, cols))


def finite_difference_gradient(
    f: Callable[[FloatArray], float], x: ArrayLike, h: float = 1e-5
) -> FloatArray:
    """Central differences (f(x + h e_k) - f(x - h e_k)) / 2h for every coordinate k."""
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")

    x0 = as_array(x).copy()
    grad = np.zeros_like(x0)
    for k in range(x0.size):
        original = x0.flat[k]

        x0.flat[k] = original + h
        f_plus = f(x0)
        x0.flat[k] = original - h
        f_minus = f(x0)
        x0.flat[k] = original

        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"objective is not finite around coordinate {k}")
        grad.flat[k] = (f_plus - f_minus) / (2.0 * h)

    logger.debug("Finite-difference gradient over %s coordinates", x0.size)
    return grad


def max_relative_error(analytic: ArrayLike, numeric: ArrayLike, floor: float = 1e-5) -> float:
    """Largest |a - n| / max(|a|, |n|, floor) over all coordinates."""
    a, n = as_array(analytic), as_array(numeric)
    if a.shape != n.shape:
        raise DimensionMismatchError(f"gradient shapes {a.shape} and {n.shape} differ")
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale))
