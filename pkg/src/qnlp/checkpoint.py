"""Flat binary parameter container.

Layout (all integers little-endian)::

    b"QNN1"
    u32  number of tensors
    per tensor:  u32 name length, UTF-8 name, u32 ndim, ndim x u64 extents
    float64 LE data of every tensor, in manifest order, C-contiguous
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"QNN1"


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
    for arr in tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise ContractError("not a QNN1 parameter file")
    pos = 4
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    manifest = []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        manifest.append((name, shape))
    out = {}
    for name, shape in manifest:
        size = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * size > len(buf):
            raise ContractError(f"truncated parameter file while reading {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(buf):
        raise ContractError("trailing bytes after parameter data")
    return out


def save(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def manifest_size(tensors: dict[str, np.ndarray]) -> int:
    """Total scalar count over all tensors."""
    return sum(int(np.asarray(a).size) for a in tensors.values())
