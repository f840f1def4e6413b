"""Binary checkpoint container.

Layout (little endian)::

    b"T4PK" | u32 version | u32 record count
    per record: u32 name length | utf-8 name | u8 frozen | u32 ndim | u32 dims... | float64 data
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Tuple

import numpy as np

MAGIC = b"T4PK"
VERSION = 1


class FormatError(ValueError):
    pass


@dataclass
class Record:
    name: str
    data: np.ndarray
    frozen: bool = False


def encode(records: Iterable[Record], version: int = VERSION) -> bytes:
    records = list(records)
    parts = [MAGIC, struct.pack("<II", version, len(records))]
    for rec in records:
        name = rec.name.encode("utf-8")
        arr = np.ascontiguousarray(rec.data, dtype="<f8")
        parts.append(struct.pack("<I", len(name)) + name)
        parts.append(struct.pack("<BI", int(rec.frozen), arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> Dict[str, Record]:
    if blob[:4] != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        offset = 12
        out: Dict[str, Record] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + nlen].decode("utf-8")
            offset += nlen
            frozen, ndim = struct.unpack_from("<BI", blob, offset)
            offset += 5
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            n = int(np.prod(shape, dtype=np.int64))
            if offset + 8 * n > len(blob):
                raise FormatError("checkpoint truncated")
            data = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
            offset += 8 * n
            out[name] = Record(name, data, bool(frozen))
    except struct.error as exc:
        raise FormatError(f"checkpoint truncated: {exc}") from exc
    if offset != len(blob):
        raise FormatError("trailing bytes after last record")
    return out


def save(path, records: Iterable[Record]) -> None:
    Path(path).write_bytes(encode(records))


def load(path) -> Dict[str, Record]:
    return decode(Path(path).read_bytes())
