"""Versioned binary checkpoint container.

Layout (all integers little-endian u32, arrays little-endian float32):

    magic   b"SVCK"
    version u32 (currently 1)
    model   u32 length + utf-8 bytes
    count   u32 number of entries
    entry*  name  u32 length + utf-8 bytes
            shape u32 ndim, then u32 per extent
            data  float32 values in C order

Entry names are the layer names of the network tables (conv_0, res_1, ...,
tr_conv3d_4, output) suffixed with the parameter kind, e.g.
``filter.conv3d_1.conv.weight``.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

MAGIC = b"SVCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model_name: str, state: Dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    name_b = model_name.encode("utf-8")
    blob += struct.pack("<I", len(name_b)) + name_b
    blob += struct.pack("<I", len(state))
    for name, arr in state.items():
        nb = name.encode("utf-8")
        blob += struct.pack("<I", len(nb)) + nb
        arr = np.asarray(arr)
        blob += struct.pack("<I", arr.ndim)
        for extent in arr.shape:
            blob += struct.pack("<I", extent)
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(bytes(blob))
    tmp.replace(path)


def load_checkpoint(path) -> Tuple[str, Dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = raw[off:off + n]
        off += n
        return chunk

    def u32():
        return struct.unpack("<I", take(4))[0]

    if take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an SVCK checkpoint")
    version = u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    model_name = take(u32()).decode("utf-8")
    count = u32()
    state: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name = take(u32()).decode("utf-8")
        ndim = u32()
        shape = tuple(u32() for _ in range(ndim))
        n_values = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(4 * n_values), dtype="<f4").reshape(shape)
        state[name] = data.copy()
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return model_name, state


def save_module(path, model_name: str, module):
    save_checkpoint(path, model_name, module.state_dict())


def load_module(path, module, expect_name: str | None = None) -> str:
    model_name, state = load_checkpoint(path)
    if expect_name is not None and model_name != expect_name:
        raise CheckpointError(
            f"{path}: checkpoint holds model '{model_name}', expected '{expect_name}'")
    module.load_state_dict(state)
    return model_name
