"""Reader/writer for the "TSTW" named-tensor container.

Layout (all integers little-endian)::

    b"TSTW"  u32 version  u32 count
    count x { u16 name_len, utf-8 name, u8 rank, rank x u32 extent, f32 data }
"""

from __future__ import annotations

import os
import struct
from typing import Dict, Mapping

import numpy as np

from ..errors import FormatError

MAGIC = b"TSTW"
VERSION = 1


def dumps_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise FormatError(f"rank {arr.ndim} exceeds container limit")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads_tensors(buf: bytes) -> Dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 12:
        raise FormatError("truncated header")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported TSTW version {version}")
    pos = 12
    out: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            if pos + 4 * n > len(buf):
                raise FormatError(f"tensor '{name}' truncated")
            out[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * n
    except struct.error as exc:
        raise FormatError(f"truncated TSTW data: {exc}") from None
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last tensor")
    return out


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps_tensors(tensors))
    os.replace(tmp, path)


def load_tensors(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads_tensors(fh.read())
