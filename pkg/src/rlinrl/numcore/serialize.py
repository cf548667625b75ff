"""RLNR parameter blobs.

Layout: b"RLNR", u16 version, u32 tensor count, then per tensor
u16 name length, UTF-8 name, u8 rank, rank x u32 dims, float32 payload.
All integers and floats little-endian; payload row-major.
"""
from __future__ import annotations

import io
import os
import struct
import tempfile
from typing import Mapping

import numpy as np

MAGIC = b"RLNR"
VERSION = 1


class FormatError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise FormatError("not an RLNR parameter blob (bad magic)")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported RLNR version {version}")
    off = 10
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off: off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            out[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated RLNR blob: {exc}") from None
    if off != len(blob):
        raise FormatError("trailing bytes after RLNR payload")
    return out


def atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path: str, tensors: Mapping[str, np.ndarray]) -> None:
    atomic_write(path, dumps(tensors))


def load(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
