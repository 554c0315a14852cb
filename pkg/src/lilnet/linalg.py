"""Dense float64 helpers, seeded RNG, and Euclidean distance matrices.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Randomness is
always an explicit ``numpy.random.Generator`` passed by the caller.
"""

from __future__ import annotations

import numpy as np

Rng = np.random.Generator

# squared distances below this fraction of 2 max|x|^2 are recomputed from differences
_CANCEL_RATIO = 1e-6


def make_rng(seed: int) -> Rng:
    """PCG64 generator; identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def pairwise_distances(points) -> np.ndarray:
    """Euclidean distance matrix between the rows of ``points``.

    Uses the Gram expansion with the squared distance clamped at zero, then
    recomputes pairs that may have lost precision to cancellation from
    explicit differences. The result is exactly symmetric with a zero diagonal.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise ValueError(f"pairwise_distances needs a non-empty N x D matrix, got shape {x.shape}")
    sq = np.einsum("ij,ij->i", x, x)
    g = x @ x.T
    g *= 2.0
    # sq_i + sq_j is exactly symmetric; the Gram product is a symmetric update
    d2 = np.add.outer(sq, sq)
    d2 -= g
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    close = d2 < _CANCEL_RATIO * 2.0 * sq.max()
    np.fill_diagonal(close, False)
    if close.any():
        ii, jj = np.nonzero(close)
        diff = x[ii] - x[jj]
        d2[ii, jj] = np.einsum("ij,ij->i", diff, diff)
    return np.sqrt(d2, out=d2)


def gaussian_sample(rng: Rng, rows: int, cols: int, mean: float = 0.0, variance: float = 1.0) -> np.ndarray:
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    if rows < 0 or cols < 0:
        raise ValueError("rows and cols must be non-negative")
    return mean + np.sqrt(variance) * rng.standard_normal((rows, cols))


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def _same_shape(a, b, op: str):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _same_shape(a, b, "add")
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = _same_shape(a, b, "sub")
    return a - b


def hadamard(a, b) -> np.ndarray:
    a, b = _same_shape(a, b, "hadamard")
    return a * b


def scale(a, s: float) -> np.ndarray:
    return float(s) * np.asarray(a, dtype=np.float64)


def transpose(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).T.copy()


def row_sums(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).sum(axis=1)


def col_sums(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).sum(axis=0)
