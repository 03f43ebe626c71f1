"""Flat binary parameter container.

Layout (all integers little-endian)::

    b"DMTK"            magic
    u32                format version (currently 1)
    repeated until EOF:
        u32            name length in bytes
        bytes          UTF-8 name
        u32            rank
        u64 * rank     dimensions
        f64 * prod     values, row-major
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"DMTK"
VERSION = 1


def dumps(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in arrays.items():
        # ascontiguousarray would promote 0-d arrays to 1-d
        arr = np.array(arr, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def loads(buf: bytes) -> "OrderedDict[str, np.ndarray]":
    if buf[:4] != MAGIC:
        raise DataError("not a DMTK checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    pos = 8
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            end = pos + 8 * count
            if end > len(buf):
                raise DataError(f"truncated checkpoint while reading {name!r}")
            out[name] = np.frombuffer(buf[pos:end], dtype="<f8").reshape(dims).astype(np.float64)
            pos = end
    except struct.error as exc:
        raise DataError(f"truncated checkpoint: {exc}") from None
    return out


def save(path, arrays: dict[str, np.ndarray]) -> None:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(dumps(arrays))
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {p}: {exc.strerror or exc}") from None


def load(path) -> "OrderedDict[str, np.ndarray]":
    p = Path(path)
    try:
        buf = p.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {p}: {exc}") from None
    return loads(buf)
