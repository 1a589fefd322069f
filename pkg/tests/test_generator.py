import numpy as np
import pytest

from lgs.generator import (
    GROUP_NAMES,
    assemble_generator,
    basis_operators,
    combine,
    ground_truth,
    latent_basis,
)
from lgs.operators import GridSpec, build_operators_2d


def test_zero_alpha_is_zero(ops8):
    assert not assemble_generator(np.zeros((2, 3)), ops8).any()


def test_linear_in_alpha(ops8, rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    lhs = assemble_generator(a + b, ops8)
    rhs = assemble_generator(a, ops8) + assemble_generator(b, ops8)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_matches_basis_combination(ops8, rng):
    a = rng.standard_normal((2, 3))
    assert np.allclose(assemble_generator(a, ops8), combine(a, basis_operators(ops8)),
                       rtol=0, atol=1e-13)


def test_catalog():
    assert np.array_equal(ground_truth("rotation").alpha_true, [[0, 0, 1], [0, -1, 0]])
    assert np.array_equal(ground_truth("translation-x").alpha_true, [[1, 0, 0], [0, 0, 0]])
    assert np.array_equal(ground_truth("translation-y").alpha_true, [[0, 0, 0], [1, 0, 0]])
    assert np.array_equal(ground_truth("isotropic-scaling").alpha_true, [[0, 1, 0], [0, 0, 1]])
    with pytest.raises(ValueError, match="valid names"):
        ground_truth("shear")
    assert "custom" in GROUP_NAMES
    with pytest.raises(ValueError):
        ground_truth("custom", np.zeros(6))


def test_translation_x_is_dx(ops8):
    lgen = assemble_generator(ground_truth("translation-x").alpha_true, ops8)
    assert np.array_equal(lgen, ops8.dx)


def test_rotation_generator_is_antisymmetric(ops16):
    lgen = assemble_generator(ground_truth("rotation").alpha_true, ops16)
    assert np.max(np.abs(lgen + lgen.T)) <= 1e-12


def radial_image(n, sigma):
    # centred Gaussian: radially symmetric, negligible at the border and at Nyquist
    c = np.arange(n) - (n - 1) / 2
    return np.exp(-(c[None, :] ** 2 + c[:, None] ** 2) / (2 * sigma**2)).ravel()


def test_rotation_annihilates_radial_image():
    n = 24
    ops = build_operators_2d(GridSpec(n))
    x = radial_image(n, 2.0)
    f = np.fft.fft2(x.reshape(n, n))
    assert np.abs(f[n // 2, :]).max() <= 1e-6 * np.abs(f).max()
    lgen = assemble_generator(ground_truth("rotation").alpha_true, ops)
    assert np.linalg.norm(lgen @ x) <= 1e-6 * np.linalg.norm(x)


@pytest.mark.parametrize("n", [4, 8])
def test_basis_linearly_independent(n):
    ops = build_operators_2d(GridSpec(n))
    flat = np.stack([b.ravel() for b in basis_operators(ops)])
    gram = flat @ flat.T
    assert np.linalg.eigvalsh(gram).min() > 0
    a = np.zeros(6)
    b = np.zeros(6)
    b[4] = 1e-9
    diff = assemble_generator(a, ops) - assemble_generator(b, ops)
    assert np.linalg.norm(diff) > 0


def test_latent_basis():
    basis = latent_basis(25)
    assert len(basis) == 6 and all(b.shape == (25, 25) for b in basis)
    flat = np.stack([b.ravel() for b in basis])
    assert np.linalg.eigvalsh(flat @ flat.T).min() > 0
    assert not any(b.any() for b in latent_basis(4))
    with pytest.raises(ValueError):
        latent_basis(10)
