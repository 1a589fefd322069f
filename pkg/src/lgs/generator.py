"""Affine generator ``L^alpha`` in the basis {1, x, y} and the ground-truth catalog."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeError
from .operators import periodic_derivative_matrix

GROUP_NAMES = ("rotation", "translation-x", "translation-y", "isotropic-scaling", "custom")

_CATALOG = {
    "rotation": [[0.0, 0.0, 1.0], [0.0, -1.0, 0.0]],
    "translation-x": [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    "translation-y": [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
    "isotropic-scaling": [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
}


def as_alpha(alpha):
    """Validate a 2x3 coefficient matrix.

    Row 0 multiplies (1, X_x, X_y) in front of d/dx, row 1 likewise for d/dy.
    """
    a = np.array(alpha, dtype=np.float64)
    if a.shape == (6,):
        a = a.reshape(2, 3)
    if a.shape != (2, 3):
        raise ShapeError(f"generator coefficients must be 2x3, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("generator coefficients must be finite")
    return a


@dataclass(frozen=True)
class GroundTruthGroup:
    name: str
    alpha_true: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.name not in GROUP_NAMES:
            raise ValueError(f"unknown group {self.name!r}; valid names: {', '.join(GROUP_NAMES)}")
        a = as_alpha(self.alpha_true)
        if not np.any(a):
            raise ValueError("ground-truth coefficients must be nonzero")
        object.__setattr__(self, "alpha_true", a)


def ground_truth(name, alpha=None):
    """Catalog entry for ``name``; ``custom`` requires explicit ``alpha``."""
    if name == "custom":
        if alpha is None:
            raise ValueError("the custom group needs explicit coefficients")
        return GroundTruthGroup("custom", as_alpha(alpha))
    if name not in _CATALOG:
        raise ValueError(f"unknown group {name!r}; valid names: {', '.join(GROUP_NAMES)}")
    return GroundTruthGroup(name, np.array(_CATALOG[name]))


def basis_operators(ops):
    """The six operators multiplied by alpha, in row-major alpha order.

    ``[dx, X_x dx, X_y dx, dy, X_x dy, X_y dy]``.
    """
    x = np.diag(ops.xx)[:, None]
    y = np.diag(ops.xy)[:, None]
    return [ops.dx, x * ops.dx, y * ops.dx, ops.dy, x * ops.dy, y * ops.dy]


def assemble_generator(alpha, ops):
    """Dense generator matrix for coefficients ``alpha``.

    The coefficient diagonals multiply from the left, so
    ``(L f)[k] = a[k] (dx f)[k] + b[k] (dy f)[k]`` with
    ``a = a11 + a12 x + a13 y`` and ``b = a21 + a22 x + a23 y``.
    """
    a = as_alpha(alpha)
    x = np.diag(ops.xx)
    y = np.diag(ops.xy)
    cx = a[0, 0] + a[0, 1] * x + a[0, 2] * y
    cy = a[1, 0] + a[1, 1] * x + a[1, 2] * y
    return cx[:, None] * ops.dx + cy[:, None] * ops.dy


def combine(alpha, basis):
    """``sum_c alpha_c B_c`` for an arbitrary six-element basis."""
    a = as_alpha(alpha).ravel()
    out = np.zeros_like(basis[0])
    for coef, b in zip(a, basis):
        if coef != 0.0:
            out += coef * b
    return out


def latent_basis(n_z):
    """Six generator basis matrices on a virtual ``m x m`` grid, ``n_z = m^2``.

    The latent code has no spatial layout of its own, so its entries are
    treated as the pixels of a small periodic grid with centered coordinates.
    For ``m = 2`` the derivative matrix vanishes identically.
    """
    m = int(round(np.sqrt(n_z)))
    if m * m != n_z or m < 2:
        raise ValueError(f"latent dimension must be a perfect square >= 4, got {n_z}")
    d1 = periodic_derivative_matrix(m)
    eye = np.eye(m)
    c = np.arange(m, dtype=np.float64) - (m - 1) / 2.0
    x = np.tile(c, m)[:, None]
    y = np.repeat(c, m)[:, None]
    dx = np.kron(eye, d1)
    dy = np.kron(d1, eye)
    return [dx, x * dx, y * dx, dy, x * dy, y * dy]
