"""Named-tensor checkpoint container.

Binary layout (little-endian): magic "DNPC", u32 version=1, u32 K,
u32 Nt, u32 Mt, u32 tensor count, then per tensor: u16 name length,
UTF-8 name, u8 rank, u32 per dimension, and the float64 payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

MAGIC = b"DNPC"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


@dataclass
class CheckpointMeta:
    k: int
    nt: int
    mt: int


def save_checkpoint(path, meta: CheckpointMeta, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, meta.k, meta.nt, meta.mt, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[CheckpointMeta, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError("file too short for checkpoint header", len(raw))
    magic, version, k, nt, mt, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    tensors: dict[str, np.ndarray] = {}
    off = _HEADER.size
    for _ in range(count):
        if off + 2 > len(raw):
            raise FormatError("truncated tensor name length", off)
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        if off + name_len > len(raw):
            raise FormatError("truncated tensor name", off)
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        if off + 1 > len(raw):
            raise FormatError("truncated tensor rank", off)
        ndim = raw[off]
        off += 1
        if off + 4 * ndim > len(raw):
            raise FormatError("truncated tensor dims", off)
        dims = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        n_bytes = 8 * int(np.prod(dims, dtype=np.int64)) if ndim else 8
        if off + n_bytes > len(raw):
            raise FormatError(f"truncated payload for tensor {name!r}", off)
        arr = np.frombuffer(raw, dtype="<f8", count=n_bytes // 8, offset=off)
        tensors[name] = arr.reshape(dims).copy()
        off += n_bytes
    if off != len(raw):
        raise FormatError("trailing bytes after last tensor", off)
    return CheckpointMeta(k, nt, mt), tensors
