"""Periodic Shannon-Whittaker interpolation and the derived grid operators.

Images are ``n x n`` arrays indexed ``[row, col]`` with ``x = col``
(horizontal) and ``y = row`` (vertical).  Flattening is row-major, so pixel
``(row, col)`` lands at index ``row * n + col`` and x varies fastest.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

COORD_CONVENTIONS = ("centered", "zero-based")


def _check_even(n):
    if int(n) != n or n < 4 or n % 2:
        raise ValueError(f"grid size must be an even integer >= 4, got {n!r}")
    return int(n)


@dataclass(frozen=True)
class GridSpec:
    n: int
    coords: str = "centered"

    def __post_init__(self):
        _check_even(self.n)
        if self.coords not in COORD_CONVENTIONS:
            raise ValueError(f"coords must be one of {COORD_CONVENTIONS}, got {self.coords!r}")

    def coordinates(self):
        """Per-axis sample coordinates in sample units."""
        c = np.arange(self.n, dtype=np.float64)
        if self.coords == "centered":
            c -= (self.n - 1) / 2.0
        return c


def _harmonics(m):
    # highest harmonic below Nyquist; m/2 - 1 for even m, (m - 1)/2 for odd m
    return np.arange(1, (m + 1) // 2, dtype=np.float64)


def periodic_kernel(x, m):
    p = _harmonics(m)
    x = np.asarray(x, dtype=np.float64)
    phase = 2.0 * np.pi * np.multiply.outer(x, p) / m
    return (1.0 + 2.0 * np.cos(phase).sum(axis=-1)) / m


def periodic_kernel_deriv(x, m):
    p = _harmonics(m)
    x = np.asarray(x, dtype=np.float64)
    phase = 2.0 * np.pi * np.multiply.outer(x, p) / m
    return -(4.0 * np.pi / m**2) * (p * np.sin(phase)).sum(axis=-1)


def whittaker_kernel(x, n):
    """Periodic interpolation kernel ``Q(x)`` for ``n`` samples per period.

    ``Q(x) = (1/n) [1 + 2 sum_{p=1}^{n/2-1} cos(2 pi p x / n)]``.  Accepts
    scalars or arrays.
    """
    n = _check_even(n)
    out = periodic_kernel(x, n)
    return float(out) if np.ndim(out) == 0 else out


def whittaker_kernel_deriv(x, n):
    """Analytic derivative ``Q'(x)`` of :func:`whittaker_kernel`."""
    n = _check_even(n)
    out = periodic_kernel_deriv(x, n)
    return float(out) if np.ndim(out) == 0 else out


def periodic_derivative_matrix(m):
    """``D[j, i] = Q'(j - i)`` for any period ``m >= 2`` (odd allowed)."""
    if int(m) != m or m < 2:
        raise ValueError(f"period must be an integer >= 2, got {m!r}")
    idx = np.arange(m)
    return periodic_kernel_deriv(np.subtract.outer(idx, idx).astype(np.float64), int(m))


def derivative_matrix_1d(n):
    """Spectral differentiation matrix on ``n`` periodic samples.

    Maps samples of a band-limited periodic signal to samples of the
    derivative of its interpolant.  The matrix is circulant and antisymmetric.
    """
    return periodic_derivative_matrix(_check_even(n))


def interpolate(image, x, y):
    """Evaluate the 2-D periodic interpolant of ``image`` at points ``(x, y)``.

    ``x`` and ``y`` are zero-based sample coordinates (column, row) of equal
    shape.  Uses the separable kernel ``Q(x - col) Q(y - row)``.
    """
    image = np.asarray(image, dtype=np.float64)
    n = image.shape[0]
    if image.shape != (n, n):
        raise ShapeError(f"image must be square, got shape {image.shape}")
    idx = np.arange(n, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    kx = periodic_kernel(np.subtract.outer(x.ravel(), idx), n)  # (P, n) over cols
    ky = periodic_kernel(np.subtract.outer(y.ravel(), idx), n)  # (P, n) over rows
    vals = np.einsum("pr,rc,pc->p", ky, image, kx)
    return vals.reshape(x.shape)


@dataclass(frozen=True, eq=False)
class Operators2D:
    """Dense ``n^2 x n^2`` derivative and coordinate operators for one grid.

    ``d1`` is the 1-D derivative matrix and ``xgrid``/``ygrid`` the per-pixel
    coordinate images; the batched flow code works from these factors
    instead of the dense matrices.
    """

    dx: np.ndarray
    dy: np.ndarray
    xx: np.ndarray
    xy: np.ndarray
    grid: GridSpec
    d1: np.ndarray
    xgrid: np.ndarray
    ygrid: np.ndarray

    @property
    def n(self):
        return self.grid.n


def build_operators_2d(grid):
    if isinstance(grid, int):
        grid = GridSpec(grid)
    n = grid.n
    d1 = derivative_matrix_1d(n)
    eye = np.eye(n)
    c = grid.coordinates()
    xgrid = np.tile(c, (n, 1))
    ygrid = np.repeat(c[:, None], n, axis=1)
    ops = Operators2D(
        dx=np.kron(eye, d1),
        dy=np.kron(d1, eye),
        xx=np.diag(xgrid.ravel()),
        xy=np.diag(ygrid.ravel()),
        grid=grid,
        d1=d1,
        xgrid=xgrid,
        ygrid=ygrid,
    )
    for arr in (ops.dx, ops.dy, ops.xx, ops.xy, d1, xgrid, ygrid):
        arr.setflags(write=False)
    return ops


def flatten(image):
    """Row-major vectorization: ``v[row * n + col] = image[row, col]``."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ShapeError(f"image must be square 2-D, got shape {image.shape}")
    return image.reshape(-1).copy()


def unflatten(v, n=None):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    side = int(round(np.sqrt(v.size)))
    if side * side != v.size:
        raise ShapeError(f"length {v.size} is not a perfect square")
    if n is not None and n != side:
        raise ShapeError(f"length {v.size} does not match grid size {n}")
    return v.reshape(side, side).copy()
