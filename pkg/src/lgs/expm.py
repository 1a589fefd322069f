"""Matrix exponential by scaling and squaring, its Frechet derivative, and
exact gradients of ``<g, exp(tL) x>``.

The Pade order is picked from the one-norm ladder of Higham (2005); the
Frechet derivative reuses :func:`expm` on the ``2n x 2n`` block matrix
``[[A, E], [0, A]]``, whose upper-right block is ``L_exp(A, E)``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ExpmOverflowError, ShapeError
from .numerics import as_matrix, as_vector, norm1, require_square, solve

_PADE_COEFFS = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
         960960.0, 16380.0, 182.0, 1.0),
}

# largest one-norm for which each order meets unit roundoff
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}



@dataclass(frozen=True)
class ExpmResult:
    value: np.ndarray
    scaling_s: int
    pade_order: int


def _pade_uv(a, order):
    b = _PADE_COEFFS[order]
    ident = np.eye(a.shape[0])
    a2 = a @ a
    if order == 13:
        a4 = a2 @ a2
        a6 = a4 @ a2
        u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
                 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
        v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
             + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
        return u, v
    powers = [ident, a2]
    for _ in range(2, (order + 1) // 2):
        powers.append(powers[-1] @ a2)
    u_in = sum(b[2 * k + 1] * p for k, p in enumerate(powers))
    v = sum(b[2 * k] * p for k, p in enumerate(powers))
    return a @ u_in, v


def expm(a):
    """Matrix exponential of a square finite matrix.

    Returns an :class:`ExpmResult` carrying the value together with the
    number of squarings and the Pade order used.

    Raises
    ------
    ExpmOverflowError
        If the result is not representable in float64.
    """
    a = as_matrix(a)
    require_square(a)
    nrm = norm1(a)
    s = 0
    for order in (3, 5, 7, 9):
        if nrm <= _THETA[order]:
            break
    else:
        order = 13
        if nrm > _THETA[13]:
            s = max(0, math.ceil(math.log2(nrm / _THETA[13])))
    scaled = a / 2.0**s if s else a
    u, v = _pade_uv(scaled, order)
    r = solve(v - u, v + u)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            r = r @ r
    if not np.all(np.isfinite(r)):
        raise ExpmOverflowError("matrix exponential overflowed during squaring")
    return ExpmResult(value=r, scaling_s=s, pade_order=order)


def expm_frechet(a, e):
    """Frechet derivative ``d/ds exp(a + s e)`` at ``s = 0``."""
    a = as_matrix(a)
    e = as_matrix(e)
    require_square(a)
    if e.shape != a.shape:
        raise ShapeError(f"direction shape {e.shape} does not match {a.shape}")
    n = a.shape[0]
    # linear in e; normalizing keeps the block norm (and squarings) driven by a
    scale = norm1(e)
    if scale == 0.0:
        return np.zeros_like(a)
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = a
    block[n:, n:] = a
    block[:n, n:] = e / scale
    return scale * expm(block).value[:n, n:]


def _check_flow_shapes(l, x):
    require_square(l, "generator")
    if x.shape[0] != l.shape[0]:
        raise ShapeError(f"signal length {x.shape[0]} does not match generator size {l.shape[0]}")


def flow_apply(l, t, x):
    """``exp(t L) x``."""
    l = as_matrix(l)
    x = as_vector(x)
    _check_flow_shapes(l, x)
    if t == 0.0:
        return x.copy()
    return expm(float(t) * l).value @ x


def flow_grads(l, t, x, g, basis):
    """Gradients of ``<g, exp(t L) x>`` with ``L = sum_c alpha_c B_c``.

    Returns ``(dt, dalpha, dx)`` where ``dalpha[c]`` pairs with
    ``basis[c]``.  Uses ``d/dt exp(tL) = L exp(tL)`` for ``dt`` and the
    adjoint identity ``<G, L_exp(A, E)> = <L_exp(A^T, G), E>`` for ``dalpha``.
    """
    l = as_matrix(l)
    x = as_vector(x)
    g = as_vector(g)
    _check_flow_shapes(l, x)
    if g.shape != x.shape:
        raise ShapeError(f"upstream gradient shape {g.shape} does not match {x.shape}")
    for b in basis:
        if np.shape(b) != l.shape:
            raise ShapeError(f"basis operator shape {np.shape(b)} does not match {l.shape}")
    t = float(t)
    e = expm(t * l).value
    y = e @ x
    dt = float(g @ (l @ y))
    dx = e.T @ g
    if not np.any(g) or t == 0.0:
        return dt, np.zeros(len(basis)), dx
    ga = expm_frechet(t * l.T, np.outer(g, x))
    dalpha = np.array([t * float(np.sum(ga * b)) for b in basis])
    return dt, dalpha, dx
