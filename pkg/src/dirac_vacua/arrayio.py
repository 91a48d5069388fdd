"""Flat binary container for dense arrays.

Layout (all integers little-endian)::

    magic   8 bytes   b"DVARRAY\\0"
    version u16       1
    dtype   u8        1 = float64, 2 = complex128, 3 = int64, 4 = uint8
    ndim    u8
    shape   ndim x u64
    payload row-major, little-endian element bytes

The payload is written from a C-contiguous little-endian copy, so identical
arrays produce identical files on any platform.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DVARRAY\0"
VERSION = 1
DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<c16"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
_HEADER = struct.Struct("<8sHBB")


class ArrayFormatError(ValueError):
    pass


def _code_for(a: np.ndarray) -> int:
    kind = a.dtype.kind
    if kind == "b":
        return 4
    if kind == "c":
        return 2
    if kind == "f":
        return 1
    if kind in "iu":
        return 4 if a.dtype.itemsize == 1 and kind == "u" else 3
    raise ArrayFormatError(f"unsupported dtype {a.dtype}")


def encode(a) -> bytes:
    a = np.asarray(a)
    code = _code_for(a)
    data = np.ascontiguousarray(a, dtype=DTYPES[code])
    head = _HEADER.pack(MAGIC, VERSION, code, a.ndim)
    shape = struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + shape + data.tobytes(order="C")


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise ArrayFormatError("truncated header")
    magic, version, code, ndim = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ArrayFormatError("bad magic bytes")
    if version != VERSION:
        raise ArrayFormatError(f"unsupported version {version}")
    if code not in DTYPES:
        raise ArrayFormatError(f"unknown dtype code {code}")
    off = _HEADER.size
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    dtype = DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(buf) - off != count * dtype.itemsize:
        raise ArrayFormatError("payload size does not match the header")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(shape).copy()


def save(path, a) -> str:
    """Write ``a`` and return the SHA-256 of the file contents."""
    data = encode(a)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
