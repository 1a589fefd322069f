"""Synthetic pair datasets, MNIST IDX ingestion and the LGSD container format.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence(seed, spawn_key=stream)``; both are fixed, documented
algorithms, so a given ``(seed, stream)`` yields the same numbers on every
platform.  Per-image streams make pair generation independent of order.
"""

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import FormatError, ShapeError
from .expm import flow_apply
from .generator import GroundTruthGroup, assemble_generator, ground_truth
from .operators import GridSpec, build_operators_2d, interpolate

MIXTURE_KINDS = ("gaussian-mixture", "uniform")
MODES = ("flow", "warp")

STREAM_PARAMS = 0
STREAM_IMAGES = 1
STREAM_SHUFFLE = 2
STREAM_INIT = 3


def stream_rng(seed, *stream):
    """Independent generator for ``(seed, stream...)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=stream)))


@dataclass(frozen=True)
class MixtureSpec:
    """Mixture of Gaussians or of uniform intervals.

    Each component is ``(weight, a, b)``: ``(mean, std)`` for
    ``gaussian-mixture`` and the interval ``[low, high]`` for ``uniform``.
    """

    components: tuple
    kind: str = "gaussian-mixture"

    def __post_init__(self):
        comps = tuple(tuple(float(v) for v in c) for c in self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        if self.kind not in MIXTURE_KINDS:
            raise ValueError(f"kind must be one of {MIXTURE_KINDS}, got {self.kind!r}")
        for w, a, b in comps:
            if not all(math.isfinite(v) for v in (w, a, b)) or w <= 0:
                raise ValueError(f"invalid mixture component {(w, a, b)}")
            if self.kind == "gaussian-mixture" and b <= 0:
                raise ValueError(f"component standard deviation must be positive, got {b}")
            if self.kind == "uniform" and b <= a:
                raise ValueError(f"uniform interval [{a}, {b}] is empty")
        if abs(sum(c[0] for c in comps) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        object.__setattr__(self, "components", comps)

    @classmethod
    def gaussian(cls, components):
        return cls(tuple(components), "gaussian-mixture")

    @classmethod
    def uniform(cls, low, high):
        return cls(((1.0, low, high),), "uniform")

    @property
    def means(self):
        if self.kind == "uniform":
            return [0.5 * (a + b) for _, a, b in self.components]
        return [a for _, a, _ in self.components]


def default_range(group_name, n):
    """Bound on |t| that default mixtures keep their 3-sigma tails inside."""
    if group_name.startswith("translation"):
        return n / 8.0
    return math.pi / 4.0


def default_mixture(group_name, modes, n):
    """``modes`` equal-weight Gaussians filling the default range.

    Neighbouring means are eight standard deviations apart, and the outer
    means sit three deviations inside the range bound.
    """
    if modes < 1:
        raise ValueError("number of modes must be >= 1")
    r = default_range(group_name, n)
    if modes == 1:
        return MixtureSpec.gaussian([(1.0, 0.0, r / 3.0)])
    outer = r / (1.0 + 3.0 / (4.0 * (modes - 1)))
    means = np.linspace(-outer, outer, modes)
    std = (means[1] - means[0]) / 8.0
    w = 1.0 / modes
    weights = [w] * (modes - 1) + [1.0 - w * (modes - 1)]
    return MixtureSpec.gaussian([(wi, float(m), float(std)) for wi, m in zip(weights, means)])


def sample_parameters(spec, count, seed):
    """``count`` i.i.d. draws from ``spec``; deterministic in ``seed``."""
    if not isinstance(spec, MixtureSpec):
        raise TypeError("spec must be a MixtureSpec")
    if count < 1:
        raise ValueError("count must be positive")
    rng = stream_rng(seed, STREAM_PARAMS)
    comps = np.array(spec.components)
    which = rng.choice(len(comps), size=count, p=comps[:, 0] / comps[:, 0].sum())
    u = rng.standard_normal(count) if spec.kind == "gaussian-mixture" else rng.random(count)
    a, b = comps[which, 1], comps[which, 2]
    if spec.kind == "gaussian-mixture":
        return a + b * u
    return a + (b - a) * u


def remove_nyquist(image):
    f = np.fft.fft2(image)
    h = image.shape[0] // 2
    f[h, :] = 0.0
    f[:, h] = 0.0
    return np.fft.ifft2(f).real


def _periodic_gaussian(n, cx, cy, sigma):
    c = np.arange(n, dtype=np.float64)
    out = np.zeros((n, n))
    for kx in (-1, 0, 1):
        gx = np.exp(-((c - cx + kx * n) ** 2) / (2 * sigma**2))
        for ky in (-1, 0, 1):
            gy = np.exp(-((c - cy + ky * n) ** 2) / (2 * sigma**2))
            out += np.outer(gy, gx)
    return out


def synth_image(n, seed, style="blobs", stream=0):
    """Random periodic test image with no Nyquist content, max ``|value|`` = 1.

    ``blobs`` sums a few positive periodic Gaussian bumps near the centre;
    ``bandlimited-noise`` low-pass filters white noise.  Returned flattened.
    """
    GridSpec(n)
    rng = stream_rng(seed, STREAM_IMAGES, stream)
    if style == "blobs":
        img = np.zeros((n, n))
        centre = (n - 1) / 2.0
        for _ in range(int(rng.integers(2, 5))):
            r = rng.uniform(0.0, 0.3 * n)
            phi = rng.uniform(0.0, 2 * np.pi)
            sigma = rng.uniform(0.09, 0.13) * n
            amp = rng.uniform(0.5, 1.0)
            img += amp * _periodic_gaussian(n, centre + r * np.cos(phi), centre + r * np.sin(phi),
                                            sigma)
    elif style == "bandlimited-noise":
        k = np.fft.fftfreq(n) * n
        env = np.exp(-(k[:, None] ** 2 + k[None, :] ** 2) / (2 * (n / 8.0) ** 2))
        img = np.fft.ifft2(np.fft.fft2(rng.standard_normal((n, n))) * env).real
    else:
        raise ValueError(f"unknown image style {style!r}")
    img = remove_nyquist(img)
    return (img / np.abs(img).max()).ravel()


@dataclass(eq=False)
class PairDataset:
    """Pairs ``(x_i, xbar_i = T(x_i, t_i))`` stored as row-stacked arrays.

    ``t`` is ground truth kept for evaluation; training never reads it.
    """

    n: int
    x: np.ndarray
    xbar: np.ndarray
    t: np.ndarray
    group: GroundTruthGroup
    mixture: MixtureSpec
    seed: int
    mode: str = "flow"

    def __post_init__(self):
        m = self.n * self.n
        if self.x.shape != self.xbar.shape or self.x.ndim != 2 or self.x.shape[1] != m:
            raise ShapeError(f"signals must have shape (N, {m})")
        if self.t.shape != (self.x.shape[0],):
            raise ShapeError("one parameter per pair is required")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def __len__(self):
        return self.x.shape[0]

    @property
    def pairs(self):
        return list(zip(self.x, self.xbar, self.t))


def affine_flow_map(alpha, t):
    """The point map ``p -> A p + c`` whose pull-back is ``exp(t L^alpha)``.

    For ``L f = v . grad f`` the flow satisfies ``exp(tL) f = f o Phi_t``
    where ``Phi_t`` integrates the affine vector field ``v``.
    """
    a = np.asarray(alpha, dtype=np.float64)
    aug = np.zeros((3, 3))
    aug[0, :2] = a[0, 1:]
    aug[1, :2] = a[1, 1:]
    aug[0, 2] = a[0, 0]
    aug[1, 2] = a[1, 0]
    m = scipy.linalg.expm(t * aug)
    return m[:2, :2], m[:2, 2]


def warp_image(x, alpha, t, grid):
    """Resample the periodic interpolant of ``x`` at ``Phi_t`` of every pixel."""
    n = grid.n
    a_mat, shift = affine_flow_map(alpha, t)
    det = float(np.linalg.det(a_mat))
    if not np.all(np.isfinite(a_mat)) or abs(det) < 1e-12:
        raise ValueError(f"affine map at t={t} is not invertible")
    c = grid.coordinates()
    px = np.tile(c, n)
    py = np.repeat(c, n)
    qx = a_mat[0, 0] * px + a_mat[0, 1] * py + shift[0]
    qy = a_mat[1, 0] * px + a_mat[1, 1] * py + shift[1]
    offset = c[0]
    return interpolate(x.reshape(n, n), qx - offset, qy - offset)


def make_pairs(group, spec, count, n, seed, mode="flow", *, style="blobs", images=None,
               coords="centered"):
    """Build a :class:`PairDataset`.

    ``mode="flow"`` applies ``exp(t L_true)`` exactly; ``mode="warp"``
    resamples the interpolant.  ``images`` (rows of length ``n^2``) replaces
    the synthetic source; it is cycled if shorter than ``count``.
    """
    if isinstance(group, str):
        group = ground_truth(group)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    grid = GridSpec(n, coords)
    t = sample_parameters(spec, count, seed)
    if images is None:
        x = np.stack([synth_image(n, seed, style, stream=i) for i in range(count)])
    else:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 2 or images.shape[1] != n * n:
            raise ShapeError(f"source images must have shape (M, {n * n})")
        x = images[np.arange(count) % images.shape[0]].copy()
    if mode == "flow":
        lgen = assemble_generator(group.alpha_true, build_operators_2d(grid))
        xbar = np.stack([flow_apply(lgen, ti, xi) for ti, xi in zip(t, x)])
    else:
        xbar = np.stack([warp_image(xi, group.alpha_true, ti, grid) for ti, xi in zip(t, x)])
    return PairDataset(n=n, x=x, xbar=xbar, t=t, group=group, mixture=spec, seed=seed, mode=mode)


# -- IDX -----------------------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _fit(images, n):
    """Centre-crop or zero-pad ``(N, r, c)`` images to ``(N, n, n)``."""
    out = np.zeros((images.shape[0], n, n))
    r, c = images.shape[1:]
    sr, dr = max(0, (r - n) // 2), max(0, (n - r) // 2)
    sc, dc = max(0, (c - n) // 2), max(0, (n - c) // 2)
    h, w = min(r, n), min(c, n)
    out[:, dr:dr + h, dc:dc + w] = images[:, sr:sr + h, sc:sc + w]
    return out


def load_idx(images_path, labels_path=None, n=None):
    """Parse a big-endian IDX3 image file (optionally gzipped).

    Pixels are scaled to ``[0, 1]`` and returned flattened, one row per
    image; ``n`` centre-crops or pads to ``n x n``.  With ``labels_path``
    returns ``(images, labels)``.
    """
    raw = _read_bytes(images_path)
    if len(raw) < 16:
        raise FormatError("IDX image header truncated", offset=len(raw))
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad IDX image magic: expected 0x{IDX_IMAGES_MAGIC:08x}, "
                          f"found 0x{magic:08x}", offset=0)
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise FormatError(f"IDX image data truncated: need {need} bytes, have {len(raw)}",
                          offset=len(raw))
    pix = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    images = pix.reshape(count, rows, cols).astype(np.float64) / 255.0
    if n is not None:
        images = _fit(images, n)
    images = images.reshape(count, -1)
    if labels_path is None:
        return images
    lab = _read_bytes(labels_path)
    if len(lab) < 8:
        raise FormatError("IDX label header truncated", offset=len(lab))
    magic, lcount = struct.unpack(">II", lab[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad IDX label magic: expected 0x{IDX_LABELS_MAGIC:08x}, "
                          f"found 0x{magic:08x}", offset=0)
    if lcount != count:
        raise FormatError(f"label count {lcount} does not match image count {count}", offset=4)
    if len(lab) < 8 + lcount:
        raise FormatError("IDX label data truncated", offset=len(lab))
    return images, np.frombuffer(lab, dtype=np.uint8, count=lcount, offset=8).copy()


# -- LGSD container ------------------------------------------------------------

LGSD_MAGIC = b"LGSD"
LGSD_VERSION = 1
_MODE_WARP = 0x01
# bit 1 of the mode byte marks uniform mixtures; the layout has no other slot for it
_KIND_UNIFORM = 0x02


@dataclass(frozen=True)
class DatasetHeader:
    version: int
    count: int
    n: int
    mode: str
    group: GroundTruthGroup
    mixture: MixtureSpec
    seed: int
    data_offset: int = field(repr=False)


def save_dataset(ds, path):
    name = ds.group.name.encode("utf-8")
    flag = (_MODE_WARP if ds.mode == "warp" else 0) | (
        _KIND_UNIFORM if ds.mixture.kind == "uniform" else 0)
    parts = [
        LGSD_MAGIC,
        struct.pack("<IIIB", LGSD_VERSION, len(ds), ds.n, flag),
        struct.pack("<H", len(name)), name,
        struct.pack("<6d", *ds.group.alpha_true.ravel()),
        struct.pack("<H", len(ds.mixture.components)),
        b"".join(struct.pack("<3d", *c) for c in ds.mixture.components),
        struct.pack("<Q", ds.seed),
    ]
    m = ds.n * ds.n
    rec = np.empty((len(ds), 2 * m + 1), dtype="<f8")
    rec[:, :m] = ds.x
    rec[:, m:2 * m] = ds.xbar
    rec[:, -1] = ds.t
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))
        fh.write(rec.tobytes())


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise FormatError("LGSD header truncated", offset=self.pos)
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def raw(self, size):
        if self.pos + size > len(self.buf):
            raise FormatError("LGSD header truncated", offset=self.pos)
        out = self.buf[self.pos:self.pos + size]
        self.pos += size
        return out


def _parse_header(buf):
    if len(buf) < 4 or buf[:4] != LGSD_MAGIC:
        raise FormatError(f"bad dataset magic: expected {LGSD_MAGIC!r}, found {bytes(buf[:4])!r}",
                          offset=0)
    r = _Reader(buf)
    r.pos = 4
    version, count, n, flag = r.take("<IIIB")
    if version != LGSD_VERSION:
        raise FormatError(f"unsupported dataset version {version} (expected {LGSD_VERSION})",
                          offset=4)
    (name_len,) = r.take("<H")
    name = r.raw(name_len).decode("utf-8")
    alpha = np.array(r.take("<6d")).reshape(2, 3)
    (ncomp,) = r.take("<H")
    comps = [r.take("<3d") for _ in range(ncomp)]
    (seed,) = r.take("<Q")
    kind = "uniform" if flag & _KIND_UNIFORM else "gaussian-mixture"
    return DatasetHeader(
        version=version, count=count, n=n, mode="warp" if flag & _MODE_WARP else "flow",
        group=GroundTruthGroup(name, alpha), mixture=MixtureSpec(tuple(comps), kind),
        seed=seed, data_offset=r.pos,
    )


def read_header(path):
    """Dataset metadata, reading only the header bytes."""
    with open(path, "rb") as fh:
        buf = fh.read(1 << 16)
    return _parse_header(buf)


def load_dataset(path):
    buf = Path(path).read_bytes()
    hdr = _parse_header(buf)
    m = hdr.n * hdr.n
    need = hdr.data_offset + hdr.count * (2 * m + 1) * 8
    if len(buf) < need:
        raise FormatError(f"dataset truncated: need {need} bytes, have {len(buf)}",
                          offset=len(buf))
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after the last record", offset=need)
    rec = np.frombuffer(buf, dtype="<f8", count=hdr.count * (2 * m + 1),
                        offset=hdr.data_offset).reshape(hdr.count, 2 * m + 1)
    return PairDataset(
        n=hdr.n, x=rec[:, :m].astype(np.float64), xbar=rec[:, m:2 * m].astype(np.float64),
        t=rec[:, -1].astype(np.float64), group=hdr.group, mixture=hdr.mixture,
        seed=hdr.seed, mode=hdr.mode,
    )
