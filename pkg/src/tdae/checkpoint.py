"""Binary checkpoint files.

Layout (all integers little-endian):

    8 bytes   magic "TDAECK01" (format version baked into the magic)
    u32       length of the config JSON blob
    ...       config JSON, UTF-8 (the resolved experiment config)
    u64       frames completed when the checkpoint was written
    u64       run seed
    u32       parameter count
    per parameter, in insertion order:
        u16   name length, then the UTF-8 name
        u8    dtype code (1 = float32, 2 = float64)
        u8    ndim, then ndim * u32 dims
        raw   values, little-endian, C order
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"TDAECK01"
_DTYPE_CODE = {"float32": 1, "float64": 2}
_CODE_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def save_checkpoint(path, params, config: dict, frames: int, seed: int) -> None:
    """params: dict name -> Tensor or ndarray."""
    blob = json.dumps(config, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<I", len(blob)), blob,
           struct.pack("<QQ", int(frames), int(seed)),
           struct.pack("<I", len(params))]
    for name, p in params.items():
        arr = np.ascontiguousarray(getattr(p, "data", p))
        code = _DTYPE_CODE.get(arr.dtype.name)
        if code is None:
            raise ValueError(f"cannot checkpoint dtype {arr.dtype} (parameter '{name}')")
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype(_CODE_DTYPE[code], copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def load_checkpoint(path):
    """Returns (params: dict name -> ndarray, config: dict, frames, seed)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic {raw[:8]!r})")
    off = 8

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise ValueError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    (blob_len,) = take("<I")
    config = json.loads(raw[off:off + blob_len].decode())
    off += blob_len
    frames, seed = take("<QQ")
    (n,) = take("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(n):
        (name_len,) = take("<H")
        name = raw[off:off + name_len].decode()
        off += name_len
        code, ndim = take("<BB")
        shape = take(f"<{ndim}I")
        dt = _CODE_DTYPE.get(code)
        if dt is None:
            raise ValueError(f"{path}: unknown dtype code {code} for '{name}'")
        count = int(np.prod(shape)) if ndim else 1
        size = count * dt.itemsize
        if off + size > len(raw):
            raise ValueError(f"{path}: truncated checkpoint in '{name}'")
        arr = np.frombuffer(raw[off:off + size], dtype=dt).reshape(shape)
        off += size
        params[name] = arr.astype(arr.dtype.newbyteorder("="))
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return params, config, int(frames), int(seed)
