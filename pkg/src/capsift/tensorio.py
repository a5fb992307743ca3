"""Versioned binary container for named float64 tensors.

Layout (all integers little-endian, data row-major float64):

    magic   4 bytes  b"CSTN"
    version u32      currently 1
    count   u32      number of tensors
    then per tensor:
        name_len u32, name utf-8,
        ndim     u32, dims u64 * ndim,
        values   f64 * prod(dims)

Used for model checkpoints and for externally injected feature maps; the
round trip is bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

MAGIC = b"CSTN"
VERSION = 1

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def dump_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(tensors))]
    for name, array in tensors.items():
        # note: ascontiguousarray would promote 0-d tensors to 1-d
        data = np.asarray(array, dtype="<f8", order="C")
        encoded = name.encode("utf-8")
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(data.ndim))
        for dim in data.shape:
            parts.append(_U64.pack(dim))
        parts.append(data.tobytes())
    return b"".join(parts)


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dump_tensors(tensors))


def parse_tensors(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise DataFormatError("not a tensor container (bad magic)")
    offset = 4
    version = _U32.unpack_from(blob, offset)[0]
    offset += 4
    if version != VERSION:
        raise DataFormatError(f"unsupported tensor container version {version}")
    count = _U32.unpack_from(blob, offset)[0]
    offset += 4
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            name_len = _U32.unpack_from(blob, offset)[0]
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            ndim = _U32.unpack_from(blob, offset)[0]
            offset += 4
            shape = []
            for _ in range(ndim):
                shape.append(_U64.unpack_from(blob, offset)[0])
                offset += 8
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            end = offset + 8 * size
            if end > len(blob):
                raise DataFormatError("tensor container truncated")
            values = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape)
            offset = end
            tensors[name] = values.astype(np.float64, copy=True)
    except struct.error as exc:
        raise DataFormatError("tensor container truncated") from exc
    return tensors


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    return parse_tensors(Path(path).read_bytes())
