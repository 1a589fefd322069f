"""Dense float64 matrix helpers.

Matrices are plain C-ordered (row-major) ``numpy.ndarray`` objects of dtype
float64; the helpers here add shape/finiteness validation and the error
types the rest of the package expects.
"""

import warnings

import numpy as np
import scipy.linalg

from .errors import NonFiniteError, ShapeError, SingularMatrixError


def as_matrix(a, *, check_finite=True):
    """Return ``a`` as a 2-D, row-major float64 array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2 or 0 in m.shape:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if check_finite and not np.all(np.isfinite(m)):
        raise NonFiniteError("matrix contains NaN or Inf entries")
    return m


def as_vector(v, *, check_finite=True):
    """Return ``v`` as a 1-D float64 array."""
    x = np.ascontiguousarray(v, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ShapeError(f"expected a non-empty 1-D vector, got shape {x.shape}")
    if check_finite and not np.all(np.isfinite(x)):
        raise NonFiniteError("vector contains NaN or Inf entries")
    return x


def require_square(a, name="matrix"):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {a.shape}")


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def kron(a, b):
    """Kronecker product; ``out[i*p + k, j*q + l] = a[i, j] * b[k, l]``."""
    return np.kron(as_matrix(a, check_finite=False), as_matrix(b, check_finite=False))


def norm1(a):
    """Maximum absolute column sum."""
    return float(np.abs(a).sum(axis=0).max())


def norm_fro(a):
    return float(np.sqrt(np.sum(np.square(a))))


def solve(a, b):
    """Solve ``a @ x = b`` by LU with partial pivoting.

    Raises
    ------
    SingularMatrixError
        If a pivot is zero relative to the largest pivot at working precision.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    require_square(a, "coefficient matrix")
    if b.shape[0] != a.shape[0]:
        raise ShapeError(f"right-hand side has {b.shape[0]} rows, expected {a.shape[0]}")
    with warnings.catch_warnings():
        # singularity is reported below with our own exception
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    pivots = np.abs(np.diag(lu))
    scale = pivots.max() if pivots.size else 0.0
    if scale == 0.0 or pivots.min() <= a.shape[0] * np.finfo(np.float64).eps * scale:
        raise SingularMatrixError(
            f"matrix is singular to working precision (smallest pivot {pivots.min():.3e})"
        )
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def lu_det(a):
    """Determinant from the LU factorization."""
    a = as_matrix(a)
    require_square(a)
    lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    sign = (-1.0) ** np.count_nonzero(piv != np.arange(a.shape[0]))
    return float(sign * np.prod(np.diag(lu)))
