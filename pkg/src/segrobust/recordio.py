"""Binary record container used for checkpoints and dataset dumps.

Layout (little-endian):
    magic "SGRB" | u32 version | u32 meta_len | meta JSON (utf-8)
    | u32 record_count | records... | u32 CRC32 of everything before it

Each record: u16 name_len | name | u8 dtype_code | u8 ndim | u32 dims...
| raw payload. Arrays are stored row-major.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"SGRB"
VERSION = 1

_DTYPES = {0: "<f8", 1: "<u1", 2: "<i8"}
_DTYPE_CODES = {np.dtype("float64"): 0, np.dtype("uint8"): 1, np.dtype("int64"): 2}


class RecordFormatError(ValueError):
    """Corrupt file, bad magic, checksum mismatch, or unsupported version."""


def write_records(path, records: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays plus a JSON metadata block to ``path``."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(meta_bytes))
    out += meta_bytes
    out += struct.pack("<I", len(records))
    for name, arr in records.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            raise RecordFormatError(f"unsupported dtype {arr.dtype} for record '{name}'")
        name_b = name.encode("utf-8")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
        for d in arr.shape:
            out += struct.pack("<I", d)
        out += arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(out))


def read_records(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a record file back; returns (arrays, metadata)."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise RecordFormatError(f"{path}: bad magic")
    (crc_stored,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != crc_stored:
        raise RecordFormatError(f"{path}: checksum mismatch")
    off = 4
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != VERSION:
        raise RecordFormatError(f"{path}: unsupported version {version}")
    (meta_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    meta = json.loads(raw[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        dtype_code, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, off) if ndim else ()
        off += 4 * ndim
        dt = np.dtype(_DTYPES[dtype_code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if ndim else dt.itemsize
        arr = np.frombuffer(raw[off:off + nbytes], dtype=dt).reshape(shape).copy()
        off += nbytes
        records[name] = arr
    return records, meta
