import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import central_difference, rel_err
from lgs.errors import ExpmOverflowError
from lgs.expm import expm, expm_frechet, flow_apply, flow_grads
from lgs.generator import assemble_generator, basis_operators, ground_truth
from lgs.numerics import norm_fro
from lgs.operators import flatten


def taylor_exp(a, terms=60):
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    return out


def test_closed_forms():
    assert np.array_equal(expm(np.zeros((4, 4))).value, np.eye(4))
    d = np.diag([0.5, -1.0, 2.0])
    assert rel_err(expm(d).value, np.diag(np.exp([0.5, -1.0, 2.0]))) <= 1e-14
    nil = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert rel_err(expm(nil).value, [[1, 1], [0, 1]]) <= 1e-15
    th = 0.7
    rot = expm(np.array([[0.0, -th], [th, 0.0]])).value
    assert rel_err(rot, [[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]) <= 1e-14


def test_small_norm_series_agreement(rng):
    for _ in range(5):
        a = rng.standard_normal((8, 8))
        a *= 0.5 / np.abs(a).sum(axis=0).max()
        assert rel_err(expm(a).value, taylor_exp(a)) <= 1e-13


@pytest.mark.parametrize("scale", [0.01, 1.0, 5.0, 40.0])
def test_against_scipy(rng, scale):
    import scipy.linalg

    a = scale * rng.standard_normal((10, 10)) / math.sqrt(10)
    ref = scipy.linalg.expm(a)
    assert norm_fro(expm(a).value - ref) <= 1e-10 * norm_fro(ref)


def test_scaling_reported():
    a = 30.0 * np.array([[0.0, -1.0], [1.0, 0.0]])
    res = expm(a)
    assert res.scaling_s > 0 and res.pade_order == 13
    assert expm(1e-3 * np.eye(2)).pade_order == 3


def test_commuting_sum(rng):
    a = rng.standard_normal((5, 5)) * 0.4
    b = 0.3 * a + 0.2 * a @ a
    lhs = expm(a + b).value
    rhs = expm(a).value @ expm(b).value
    assert norm_fro(lhs - rhs) <= 1e-11 * norm_fro(lhs)


def test_inverse(rng):
    a = rng.standard_normal((6, 6))
    assert norm_fro(expm(a).value @ expm(-a).value - np.eye(6)) <= 1e-11


def test_overflow():
    with pytest.raises(ExpmOverflowError):
        expm(np.array([[800.0, 0.0], [0.0, 0.0]]))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-2, 2)))
def test_determinant_is_exp_trace(a):
    det = np.linalg.det(expm(a).value)
    assert det == pytest.approx(math.exp(np.trace(a)), rel=1e-10)


def test_frechet_finite_difference(rng):
    a = rng.standard_normal((6, 6)) * 0.5
    e = rng.standard_normal((6, 6))
    h = 1e-6
    fd = (expm(a + h * e).value - expm(a - h * e).value) / (2 * h)
    assert norm_fro(expm_frechet(a, e) - fd) <= 1e-7 * norm_fro(fd)


def test_frechet_along_self(rng):
    a = rng.standard_normal((5, 5)) * 0.6
    ea = expm(a).value
    assert norm_fro(expm_frechet(a, a) - a @ ea) <= 1e-12 * norm_fro(a @ ea)
    assert not expm_frechet(a, np.zeros_like(a)).any()


def test_frechet_large_direction(rng):
    # a huge direction must not blow up the block exponential
    a = rng.standard_normal((4, 4)) * 0.3
    e = 1e6 * rng.standard_normal((4, 4))
    ref = 1e6 * expm_frechet(a, e / 1e6)
    assert norm_fro(expm_frechet(a, e) - ref) <= 1e-12 * norm_fro(ref)


def nyquist_free_image(rng, n):
    f = np.fft.fft2(rng.standard_normal((n, n)))
    f[n // 2, :] = 0
    f[:, n // 2] = 0
    return np.fft.ifft2(f).real


def test_translation_by_one_pixel_is_a_roll(ops8, rng):
    img = nyquist_free_image(rng, 8)
    lgen = assemble_generator(ground_truth("translation-x").alpha_true, ops8)
    out = flow_apply(lgen, 1.0, flatten(img)).reshape(8, 8)
    assert np.max(np.abs(out - np.roll(img, -1, axis=1))) <= 1e-10
    lgen = assemble_generator(ground_truth("translation-y").alpha_true, ops8)
    out = flow_apply(lgen, -2.0, flatten(img)).reshape(8, 8)
    assert np.max(np.abs(out - np.roll(img, 2, axis=0))) <= 1e-10


def test_flow_group_law(ops8, rng):
    lgen = assemble_generator(rng.standard_normal((2, 3)) * 0.2, ops8)
    x = rng.standard_normal(64)
    two_step = flow_apply(lgen, 0.3, flow_apply(lgen, 0.5, x))
    assert rel_err(two_step, flow_apply(lgen, 0.8, x)) <= 1e-11
    assert np.array_equal(flow_apply(lgen, 0.0, x), x)


def test_rotation_flow_preserves_norm(ops8, rng):
    lgen = assemble_generator(ground_truth("rotation").alpha_true, ops8)
    x = rng.standard_normal(64)
    y = flow_apply(lgen, 0.4, x)
    assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(x), rel=1e-12)


def test_flow_grads_against_finite_differences(ops8, rng):
    basis = basis_operators(ops8)
    alpha = rng.standard_normal(6) * 0.2
    x = rng.standard_normal(64)
    g = rng.standard_normal(64)
    t = 0.7

    def value(a, tt, xx):
        lgen = sum(c * b for c, b in zip(a, basis))
        return float(g @ flow_apply(lgen, tt, xx))

    lgen = sum(c * b for c, b in zip(alpha, basis))
    dt, dalpha, dx = flow_grads(lgen, t, x, g, basis)
    fd_t = (value(alpha, t + 1e-5, x) - value(alpha, t - 1e-5, x)) / 2e-5
    assert abs(dt - fd_t) <= 1e-6 * max(1, abs(fd_t))
    fd_a = central_difference(lambda a: value(a, t, x), alpha)
    assert rel_err(dalpha, fd_a) <= 1e-6
    assert rel_err(dx, central_difference(lambda xx: value(alpha, t, xx), x)) <= 1e-6


def test_flow_grads_trivial_cases(ops8, rng):
    basis = basis_operators(ops8)
    lgen = assemble_generator(rng.standard_normal((2, 3)), ops8)
    x, g = rng.standard_normal(64), rng.standard_normal(64)
    dt, dalpha, dx = flow_grads(lgen, 0.0, x, g, basis)
    assert dt == pytest.approx(float(g @ lgen @ x), rel=1e-14)
    assert np.array_equal(dx, g) and not dalpha.any()
    dt, dalpha, dx = flow_grads(lgen, 0.6, x, np.zeros(64), basis)
    assert dt == 0.0 and not dalpha.any() and not dx.any()


def test_flow_grads_generic_nine_by_nine(rng):
    # the rule only needs L to be linear in the coefficients, not a pixel grid
    basis = [rng.standard_normal((9, 9)) / 3 for _ in range(6)]
    alpha = rng.standard_normal(6) * 0.5
    x, g, t = rng.standard_normal(9), rng.standard_normal(9), -0.8

    def value(a, tt, xx):
        return float(g @ flow_apply(sum(c * b for c, b in zip(a, basis)), tt, xx))

    dt, dalpha, dx = flow_grads(sum(c * b for c, b in zip(alpha, basis)), t, x, g, basis)
    fd_t = central_difference(lambda tt: value(alpha, tt[0], x), [t])[0]
    assert abs(dt - fd_t) <= 1e-6 * max(1.0, abs(fd_t))
    assert rel_err(dalpha, central_difference(lambda a: value(a, t, x), alpha)) <= 1e-6
    assert rel_err(dx, central_difference(lambda xx: value(alpha, t, xx), x)) <= 1e-6


def test_flow_grads_shape_check(ops8):
    with pytest.raises(Exception):
        flow_grads(np.eye(64), 1.0, np.ones(63), np.ones(63), basis_operators(ops8))


def test_frechet_at_zero_is_direction(rng):
    e = rng.standard_normal((5, 5))
    assert rel_err(expm_frechet(np.zeros((5, 5)), e), e) <= 1e-14


def test_translation_flow_shifts_sinusoid(ops16):
    lgen = assemble_generator(ground_truth("translation-x").alpha_true, ops16)
    col = np.tile(np.arange(16.0), 16)
    x = np.sin(2 * np.pi * col / 16)
    for t in (-2.0, -0.37, 1.25, 2.0):
        expected = np.sin(2 * np.pi * (col + t) / 16)
        assert np.max(np.abs(flow_apply(lgen, t, x) - expected)) <= 1e-8
