"""Versioned binary checkpoint container.

Layout (little-endian): magic "TSCK", u32 version, u32 config length,
config JSON bytes, u32 blob count, then per blob: u32 name length, name
bytes, u8 ndim, ndim u32 dims, float32 data. Blob order is the model's
deterministic parameter order, so identical states produce identical
files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TSCK"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, config: dict, blobs: list[tuple[str, np.ndarray]]) -> None:
    payload = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(config, sort_keys=True).encode()
    payload.append(struct.pack("<I", len(cfg)))
    payload.append(cfg)
    payload.append(struct.pack("<I", len(blobs)))
    for name, arr in blobs:
        nb = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f4")
        payload.append(struct.pack("<I", len(nb)))
        payload.append(nb)
        payload.append(struct.pack("<B", arr.ndim))
        payload.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(arr.tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(payload))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    off = 4
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    config = json.loads(raw[off : off + cfg_len])
    off += cfg_len
    (n_blobs,) = struct.unpack_from("<I", raw, off)
    off += 4
    blobs: dict[str, np.ndarray] = {}
    for _ in range(n_blobs):
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        blobs[name] = arr.copy()
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return config, blobs
