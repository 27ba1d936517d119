"""Flat binary checkpoint container.

Layout (all integers little-endian)::

    b"AGT1" | version:u32 | count:u64
    per tensor: name_len:u32 | name:utf-8 | rank:u32 | dims:u64*rank | values:f64*prod(dims)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from agcnn.errors import InputError

MAGIC = b"AGT1"
VERSION = 1


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_tensors(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise InputError(f"{path}: not an AGT1 checkpoint (magic {data[:4]!r})")
    version, count = struct.unpack_from("<IQ", data, 4)
    if version != VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * n > len(data):
                raise InputError(f"{path}: truncated record {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(dims).copy()
            pos += 8 * n
    except struct.error as exc:
        raise InputError(f"{path}: truncated checkpoint ({exc})") from exc
    return out
