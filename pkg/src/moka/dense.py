"""Dense float64 linear algebra used by the adapter code.

Matrices and vectors are plain ``numpy`` float64 arrays. Reshape and vec use
column-major (column-stacking) order, which is the convention under which
``(A kron B) x == vec(B @ reshape(x) @ A.T)`` holds.
"""

from __future__ import annotations

import numpy as np

# Largest explicit matrix (in entries) that kron_explicit / materialize will build.
EXPLICIT_SIZE_CAP = 2**24


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class SizeCapError(ValueError):
    """Raised when an explicit construction would exceed the entry cap."""


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def reshape_vec_to_matrix(x, rows: int, cols: int) -> np.ndarray:
    """Fill a ``rows x cols`` matrix from ``x`` column by column."""
    x = as_vector(x)
    if x.size != rows * cols:
        raise ShapeError(f"vector of length {x.size} cannot fill a {rows}x{cols} matrix")
    return x.reshape((cols, rows)).T


def vec_matrix(m) -> np.ndarray:
    """Stack the columns of ``m`` into one vector (inverse of reshape_vec_to_matrix)."""
    m = as_matrix(m)
    return m.T.reshape(-1).copy()


def kron_explicit(a, b, cap: int = EXPLICIT_SIZE_CAP) -> np.ndarray:
    """Build ``a kron b`` block by block: block (i, j) is ``a[i, j] * b``."""
    a, b = as_matrix(a), as_matrix(b)
    ma, na = a.shape
    mb, nb = b.shape
    size = ma * mb * na * nb
    if size > cap:
        raise SizeCapError(f"explicit Kronecker product has {size} entries, cap is {cap}")
    out = np.empty((ma * mb, na * nb))
    for i in range(ma):
        for j in range(na):
            out[i * mb:(i + 1) * mb, j * nb:(j + 1) * nb] = a[i, j] * b
    return out


def frobenius_norm(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(m * m)))


def numeric_rank(m, rel_tol: float = 1e-9) -> int:
    """Rank by Gaussian elimination with partial pivoting.

    A pivot counts as zero when its magnitude is below ``rel_tol`` times the
    largest absolute entry of the input.
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    work = as_matrix(m).copy()
    rows, cols = work.shape
    scale = np.max(np.abs(work)) if work.size else 0.0
    if scale == 0.0:
        return 0
    threshold = rel_tol * scale
    rank = 0
    for col in range(cols):
        if rank == rows:
            break
        pivot = rank + int(np.argmax(np.abs(work[rank:, col])))
        if abs(work[pivot, col]) < threshold:
            continue
        if pivot != rank:
            work[[rank, pivot]] = work[[pivot, rank]]
        factors = work[rank + 1:, col] / work[rank, col]
        work[rank + 1:, col:] -= np.outer(factors, work[rank, col:])
        rank += 1
    return rank


def pad_vector(x, target_len: int) -> np.ndarray:
    """Zero-pad ``x`` at the end up to ``target_len``."""
    x = as_vector(x)
    if target_len < x.size:
        raise ShapeError(f"cannot pad length {x.size} down to {target_len}; use truncate_vector")
    out = np.zeros(target_len)
    out[: x.size] = x
    return out


def truncate_vector(x, target_len: int) -> np.ndarray:
    """Keep the first ``target_len`` entries of ``x``."""
    x = as_vector(x)
    if target_len > x.size:
        raise ShapeError(f"cannot truncate length {x.size} up to {target_len}; use pad_vector")
    return x[:target_len].copy()
