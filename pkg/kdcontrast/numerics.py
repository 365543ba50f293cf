"""Scalar and vector primitives shared by the rest of the package.

Everything here is a pure function of its inputs and accumulates in double
precision regardless of how the inputs were stored.
"""

from typing import Sequence, Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import spearmanr

from .exceptions import (
    DegenerateInput,
    DimensionMismatch,
    EmptySequence,
    LengthMismatch,
    ZeroNormVector,
)


def as_vector(values: Sequence[float], name: str = "vector") -> np.ndarray:
    """Return `values` as a finite, non-empty 1-D float64 array"""
    vector = np.asarray(values, dtype=np.float64)
    if vector.ndim != 1 or vector.size == 0:
        raise DimensionMismatch(f"{name} must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(vector)):
        raise DegenerateInput(f"{name} contains non-finite values")
    return vector


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1]"""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.size} != {b.size}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0:
        raise ZeroNormVector("first vector has zero norm", side="a")
    if norm_b == 0.0:
        raise ZeroNormVector("second vector has zero norm", side="b")
    value = float(np.dot(a, b)) / (norm_a * norm_b)
    return min(1.0, max(-1.0, value))


def angle(a: Sequence[float], b: Sequence[float]) -> float:
    """Angle between two vectors in radians, in [0, pi]"""
    return float(np.arccos(cosine(a, b)))


def log_sum_exp(values: Sequence[float]) -> float:
    """Numerically stable log(sum(exp(values)))"""
    array = np.asarray(values, dtype=np.float64).ravel()
    if array.size == 0:
        raise EmptySequence("log_sum_exp needs at least one value")
    if not np.all(np.isfinite(array)):
        raise DegenerateInput("log_sum_exp values must be finite")
    return float(logsumexp(array))


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation, ties resolved by average ranks"""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise LengthMismatch(f"length mismatch: {x.size} != {y.size}")
    if x.size < 2:
        raise LengthMismatch("spearman needs at least two observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInput("spearman is undefined for a constant sequence")
    rho = float(spearmanr(x, y)[0])
    return min(1.0, max(-1.0, rho))


def unit_rows(matrix: np.ndarray, side: str = "rows") -> Tuple[np.ndarray, np.ndarray]:
    """Split a 2-D array into row norms and L2-normalised rows.

    Raises:
        ZeroNormVector: if any row has zero norm; ``index`` names the row.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionMismatch(f"{side} must be a 2-D batch, got ndim={matrix.ndim}")
    norms = np.linalg.norm(matrix, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        index = int(zero[0])
        raise ZeroNormVector(f"{side}[{index}] has zero norm", index=index, side=side)
    return norms, matrix / norms[:, None]
