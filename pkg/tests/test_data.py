import gzip
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgs.data import (
    MixtureSpec,
    affine_flow_map,
    default_mixture,
    load_dataset,
    load_idx,
    make_pairs,
    read_header,
    sample_parameters,
    save_dataset,
    synth_image,
    warp_image,
)
from lgs.errors import FormatError
from lgs.expm import flow_apply
from lgs.generator import assemble_generator, ground_truth
from lgs.operators import GridSpec, build_operators_2d


def test_sampling_is_deterministic():
    spec = default_mixture("rotation", 2, 16)
    a = sample_parameters(spec, 50, seed=4)
    assert np.array_equal(a, sample_parameters(spec, 50, seed=4))
    assert not np.array_equal(a, sample_parameters(spec, 50, seed=5))


def test_single_component_moments():
    t = sample_parameters(MixtureSpec.gaussian([(1.0, 0.2, 0.05)]), 10000, seed=1)
    assert abs(t.mean() - 0.2) < 5 * 0.05 / 100
    u = sample_parameters(MixtureSpec.uniform(-1.0, 2.0), 5000, seed=1)
    assert u.min() >= -1.0 and u.max() < 2.0


def test_mixture_weights():
    spec = MixtureSpec.gaussian([(0.25, -5.0, 0.1), (0.75, 5.0, 0.1)])
    t = sample_parameters(spec, 8000, seed=2)
    assert abs(np.mean(t > 0) - 0.75) < 0.02
    with pytest.raises(ValueError):
        MixtureSpec.gaussian([(0.5, 0.0, 1.0)])
    with pytest.raises(ValueError):
        MixtureSpec.gaussian([(1.0, 0.0, -1.0)])


def test_default_mixture_separation():
    for k in (2, 3):
        spec = default_mixture("rotation", k, 16)
        means = np.array(spec.means)
        std = spec.components[0][2]
        assert np.min(np.diff(means)) >= 6 * std


def test_synthetic_images_are_nyquist_free():
    for style in ("blobs", "bandlimited-noise"):
        img = synth_image(16, 3, style, stream=7).reshape(16, 16)
        f = np.fft.fft2(img)
        assert np.abs(f[8, :]).max() <= 1e-12 * np.abs(f).max()
        assert np.abs(f[:, 8]).max() <= 1e-12 * np.abs(f).max()
        assert np.abs(img).max() == pytest.approx(1.0)
    assert np.array_equal(synth_image(16, 3, stream=2), synth_image(16, 3, stream=2))


def test_flow_pairs_are_exact():
    ds = make_pairs("rotation", MixtureSpec.uniform(-0.5, 0.5), 6, 8, seed=3)
    lgen = assemble_generator(ds.group.alpha_true, build_operators_2d(GridSpec(8)))
    for x, xbar, t in ds.pairs:
        assert np.max(np.abs(flow_apply(lgen, t, x) - xbar)) <= 1e-12


def test_affine_flow_map_rotation():
    a, c = affine_flow_map(ground_truth("rotation").alpha_true, 0.3)
    assert np.allclose(a, [[np.cos(0.3), np.sin(0.3)], [-np.sin(0.3), np.cos(0.3)]], atol=1e-15)
    assert not c.any()
    a, c = affine_flow_map(ground_truth("translation-x").alpha_true, 1.5)
    assert np.array_equal(a, np.eye(2)) and np.allclose(c, [1.5, 0])


def test_warp_translation_matches_flow():
    # translations act exactly on band-limited periodic images in both paths
    ds = make_pairs("translation-x", MixtureSpec.uniform(-2.0, 2.0), 4, 16, seed=5, mode="warp")
    lgen = assemble_generator(ds.group.alpha_true, build_operators_2d(GridSpec(16)))
    for x, xbar, t in ds.pairs:
        assert np.max(np.abs(flow_apply(lgen, t, x) - xbar)) <= 1e-10


def _centred_gaussian(n, sigma):
    c = np.arange(n) - (n - 1) / 2
    return np.exp(-(c[None, :] ** 2 + c[:, None] ** 2) / (2 * sigma**2)).ravel()


def test_warp_rotation_matches_flow_on_a_wide_grid():
    n = 24
    grid = GridSpec(n)
    lgen = assemble_generator(ground_truth("rotation").alpha_true, build_operators_2d(grid))
    x = _centred_gaussian(n, 2.0)
    for t in (-0.3, 0.1, 0.3):
        gap = np.abs(warp_image(x, ground_truth("rotation").alpha_true, t, grid)
                     - flow_apply(lgen, t, x)).max()
        assert gap <= 1e-6


@pytest.mark.xfail(strict=True, reason="rotation leaves the band-limited periodic class on a "
                   "16-pixel grid; the two paths differ by far more than 1e-6 there")
def test_warp_rotation_matches_flow_on_blobs_n16():
    ds = make_pairs("rotation", MixtureSpec.uniform(-0.3, 0.3), 4, 16, seed=1, mode="warp")
    lgen = assemble_generator(ds.group.alpha_true, build_operators_2d(GridSpec(16)))
    gap = max(np.abs(flow_apply(lgen, t, x) - xb).max() for x, xb, t in ds.pairs)
    assert gap <= 1e-6


def test_warp_rejects_singular_map():
    alpha = np.array([[0, -1, 0], [0, 0, -1]], dtype=float)
    with pytest.raises(ValueError):
        warp_image(np.zeros(64), alpha, 40.0, GridSpec(8))


@pytest.fixture
def small_ds():
    return make_pairs("rotation", default_mixture("rotation", 2, 8), 5, 8, seed=9)


def test_lgsd_round_trip(tmp_path, small_ds):
    p = tmp_path / "d.lgsd"
    save_dataset(small_ds, p)
    back = load_dataset(p)
    for name in ("x", "xbar", "t"):
        assert getattr(back, name).tobytes() == getattr(small_ds, name).tobytes()
    assert back.mixture == small_ds.mixture and back.seed == 9 and back.mode == "flow"
    assert np.array_equal(back.group.alpha_true, small_ds.group.alpha_true)
    hdr = read_header(p)
    assert hdr.count == 5 and hdr.n == 8
    save_dataset(back, tmp_path / "e.lgsd")
    assert (tmp_path / "e.lgsd").read_bytes() == p.read_bytes()


def test_lgsd_keeps_uniform_kind(tmp_path):
    ds = make_pairs("translation-y", MixtureSpec.uniform(-1, 1), 2, 8, seed=0, mode="warp")
    save_dataset(ds, tmp_path / "u.lgsd")
    back = load_dataset(tmp_path / "u.lgsd")
    assert back.mixture.kind == "uniform" and back.mode == "warp"


def test_lgsd_errors(tmp_path, small_ds):
    p = tmp_path / "d.lgsd"
    save_dataset(small_ds, p)
    raw = p.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="offset 0"):
        load_dataset(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-8])
    with pytest.raises(FormatError, match="truncated"):
        load_dataset(tmp_path / "short")
    (tmp_path / "long").write_bytes(raw + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_dataset(tmp_path / "long")
    (tmp_path / "hdr").write_bytes(raw[:20])
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "hdr")


def _idx_bytes(images):
    count, r, c = images.shape
    return struct.pack(">IIII", 0x803, count, r, c) + images.astype(np.uint8).tobytes()


def test_idx_parse(tmp_path):
    imgs = np.arange(2 * 3 * 3).reshape(2, 3, 3) * 10
    (tmp_path / "i.idx").write_bytes(_idx_bytes(imgs))
    out = load_idx(tmp_path / "i.idx")
    assert out.shape == (2, 9) and out[1, -1] == pytest.approx(170 / 255)
    (tmp_path / "i.gz").write_bytes(gzip.compress(_idx_bytes(imgs)))
    assert np.array_equal(load_idx(tmp_path / "i.gz"), out)
    (tmp_path / "l.idx").write_bytes(struct.pack(">II", 0x801, 2) + bytes([7, 3]))
    _, labels = load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
    assert list(labels) == [7, 3]
    padded = load_idx(tmp_path / "i.idx", n=4)
    assert padded.shape == (2, 16)


def test_idx_errors(tmp_path):
    raw = _idx_bytes(np.zeros((2, 4, 4)))
    (tmp_path / "m").write_bytes(b"\0\0\x08\x01" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        load_idx(tmp_path / "m")
    (tmp_path / "t").write_bytes(raw[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_idx(tmp_path / "t")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 3))
def test_sampling_reproducible_for_any_seed(seed, modes):
    spec = default_mixture("translation-x", modes, 16)
    assert np.array_equal(sample_parameters(spec, 7, seed), sample_parameters(spec, 7, seed))


def test_symmetric_mixture_mean_within_clt_bound():
    spec = MixtureSpec.gaussian([(0.5, -0.4, 0.05), (0.5, 0.4, 0.05)])
    t = sample_parameters(spec, 10_000, seed=3)
    sigma_mean = math.sqrt(0.4**2 + 0.05**2) / 100
    assert abs(t.mean()) <= 3 * sigma_mean


def test_blobs_are_nonnegative():
    for seed in range(5):
        assert synth_image(16, seed, "blobs").min() >= -1e-9


def test_zero_parameter_gives_identical_pairs():
    spec = MixtureSpec.gaussian([(1.0, 0.0, 1e-300)])
    for mode in ("flow", "warp"):
        ds = make_pairs("rotation", spec, 2, 8, seed=1, mode=mode)
        assert np.abs(ds.xbar - ds.x).max() <= 1e-12


def test_idx_mnist_shaped_file(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, (2, 28, 28))
    raw = _idx_bytes(imgs)
    assert len(raw) == 16 + 1568
    (tmp_path / "m.idx").write_bytes(raw)
    out = load_idx(tmp_path / "m.idx")
    assert out.shape == (2, 784) and out.min() >= 0 and out.max() <= 1
    (tmp_path / "w.idx").write_bytes(struct.pack(">I", 0x999) + raw[4:])
    with pytest.raises(FormatError, match="0x00000803.*0x00000999"):
        load_idx(tmp_path / "w.idx")


def test_flow_pairs_invert():
    ds = make_pairs("isotropic-scaling", default_mixture("isotropic-scaling", 2, 8), 4, 8, seed=2)
    lgen = assemble_generator(ds.group.alpha_true, build_operators_2d(GridSpec(8)))
    for x, xbar, t in ds.pairs:
        assert np.abs(flow_apply(lgen, -t, xbar) - x).max() <= 1e-8


def test_sampled_peaks_sit_on_component_means():
    from lgs.analysis import kde

    spec = default_mixture("rotation", 3, 16)
    t = sample_parameters(spec, 10_000, seed=8)
    std = min(c[2] for c in spec.components)
    grid, dens = kde(t, bandwidth=std / 4)
    inner = (dens[1:-1] > dens[:-2]) & (dens[1:-1] > dens[2:]) & (dens[1:-1] > 0.05 * dens.max())
    peaks = grid[1:-1][inner]
    assert len(peaks) == 3
    assert np.abs(np.sort(peaks) - np.array(spec.means)).max() <= 0.5 * std


def test_warp_integer_translation_is_circular_shift():
    ds = make_pairs("translation-y", MixtureSpec.uniform(2.0, 2.0 + 1e-15), 2, 8, seed=4,
                    mode="warp")
    for x, xbar, _ in ds.pairs:
        assert np.abs(xbar.reshape(8, 8) - np.roll(x.reshape(8, 8), -2, axis=0)).max() <= 1e-9
