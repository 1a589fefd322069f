"""LGCK checkpoint files: named float64 blocks behind a shape manifest.

Layout (little-endian): ``b"LGCK"``, u32 version, u32 block count, then per
block a u16-length-prefixed UTF-8 name, u8 ndim and ndim x u32 dims; after
the manifest, every block's f64 data in manifest order.
"""

import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .models import LatentModel, NaiveModel, TrainState, _nets_arrays, _set_nets
from .nn import AdamState

LGCK_MAGIC = b"LGCK"
LGCK_VERSION = 1


def write_blocks(path, blocks):
    """Atomically write ``{name: array}`` to ``path``."""
    manifest = [LGCK_MAGIC, struct.pack("<II", LGCK_VERSION, len(blocks))]
    data = []
    for name, arr in blocks.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        manifest.append(struct.pack("<H", len(raw)) + raw)
        manifest.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        data.append(np.ascontiguousarray(arr).tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(manifest) + b"".join(data))
    os.replace(tmp, path)


def read_blocks(path):
    buf = Path(path).read_bytes()
    if buf[:4] != LGCK_MAGIC:
        raise FormatError(f"bad checkpoint magic: expected {LGCK_MAGIC!r}, found {buf[:4]!r}",
                          offset=0)
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise FormatError("checkpoint manifest truncated", offset=pos)
        out = struct.unpack_from(fmt, buf, pos)
        pos += size
        return out

    version, count = take("<II")
    if version != LGCK_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    entries = []
    for _ in range(count):
        (ln,) = take("<H")
        if pos + ln > len(buf):
            raise FormatError("checkpoint manifest truncated", offset=pos)
        name = buf[pos:pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        entries.append((name, tuple(shape)))
    blocks = {}
    for name, shape in entries:
        size = int(np.prod(shape)) if shape else 1
        if pos + 8 * size > len(buf):
            raise FormatError(f"checkpoint data truncated in block {name!r}", offset=pos)
        blocks[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    if pos != len(buf):
        raise FormatError("trailing bytes after checkpoint data", offset=pos)
    return blocks


def _adam_blocks(prefix, st):
    out = {f"{prefix}/step": np.array(float(st.step))}
    for i, (m, v) in enumerate(zip(st.m, st.v)):
        out[f"{prefix}/m{i}"] = m
        out[f"{prefix}/v{i}"] = v
    return out


def _adam_from(prefix, blocks, like):
    k = len(like.m)
    return AdamState([blocks[f"{prefix}/m{i}"] for i in range(k)],
                     [blocks[f"{prefix}/v{i}"] for i in range(k)],
                     int(blocks[f"{prefix}/step"]), like.lr, like.beta1, like.beta2, like.eps)


def save_state(path, st):
    model = st.model
    alpha = model.alpha if isinstance(model, NaiveModel) else model.alpha_tilde
    blocks = {"meta/epoch": np.array(float(st.epoch)), "meta/step": np.array(float(st.step)),
              "alpha": alpha}
    for i, a in enumerate(_nets_arrays(model)):
        blocks[f"nets/{i}"] = a
    blocks.update(_adam_blocks("adam_alpha", st.opt_alpha))
    blocks.update(_adam_blocks("adam_nets", st.opt_nets))
    write_blocks(path, blocks)


def load_state(path, template):
    """Restore a :class:`TrainState` saved by :func:`save_state`.

    ``template`` is a freshly initialized state for the same configuration;
    it supplies network specs and optimizer hyperparameters.
    """
    blocks = read_blocks(path)
    model = template.model
    arrays = _nets_arrays(model)
    restored = []
    for i, a in enumerate(arrays):
        b = blocks.get(f"nets/{i}")
        if b is None or b.shape != a.shape:
            raise FormatError(f"checkpoint block nets/{i} missing or mis-shaped")
        restored.append(b)
    model = _set_nets(model, restored)
    if isinstance(model, NaiveModel):
        model.alpha = blocks["alpha"]
    elif isinstance(model, LatentModel):
        model.alpha_tilde = blocks["alpha"]
    return TrainState(model, _adam_from("adam_alpha", blocks, template.opt_alpha),
                      _adam_from("adam_nets", blocks, template.opt_nets),
                      epoch=int(blocks["meta/epoch"]), step=int(blocks["meta/step"]))
