"""Binary container for named model tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"DANW"
    version u32      currently 1
    count   u32      number of tensors
    per tensor:
        name_len u16, name bytes (UTF-8)
        rank     u8
        dims     u32 * rank
        payload  float32 * prod(dims), row-major

Payloads are written with a raw memcpy of the float32 bits, so a
save/load cycle is bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .fileio import atomic_write_bytes

MAGIC = b"DANW"
VERSION = 1


class WeightFileError(ValueError):
    """Container is malformed or has an unsupported version."""


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        data = np.asarray(arr, dtype="<f4")
        if data.ndim:  # ascontiguousarray would promote 0-d to 1-d
            data = np.ascontiguousarray(data)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise WeightFileError(f"tensor name too long: {name!r}")
        if data.ndim > 0xFF:
            raise WeightFileError(f"tensor rank {data.ndim} exceeds container limit")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise WeightFileError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise WeightFileError(f"{path}: unsupported container version {version}")
    offset = 12
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        tensors[name] = payload.reshape(dims).copy()
    if offset != len(blob):
        raise WeightFileError(f"{path}: {len(blob) - offset} trailing bytes after last tensor")
    return tensors
