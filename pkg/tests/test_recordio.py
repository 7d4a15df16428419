"""Round-trip and corruption tests for the binary record container."""

import numpy as np
import pytest

from segrobust import recordio


def test_roundtrip(tmp_path):
    path = tmp_path / "r.bin"
    records = {
        "a": np.arange(12, dtype=np.float64).reshape(3, 4),
        "b": np.array([1, 2, 255], dtype=np.uint8),
        "c": np.array([[-5]], dtype=np.int64),
    }
    meta = {"kind": "test", "note": "x"}
    recordio.write_records(path, records, meta)
    got, got_meta = recordio.read_records(path)
    assert got_meta == meta
    assert set(got) == set(records)
    for k in records:
        np.testing.assert_array_equal(got[k], records[k])
        assert got[k].dtype == records[k].dtype


def test_write_is_deterministic(tmp_path):
    records = {"a": np.ones((2, 2))}
    recordio.write_records(tmp_path / "x.bin", records, {"k": 1})
    recordio.write_records(tmp_path / "y.bin", records, {"k": 1})
    assert (tmp_path / "x.bin").read_bytes() == (tmp_path / "y.bin").read_bytes()


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + b"\0" * 32)
    with pytest.raises(recordio.RecordFormatError):
        recordio.read_records(p)


def test_checksum_mismatch(tmp_path):
    p = tmp_path / "c.bin"
    recordio.write_records(p, {"a": np.ones(3)}, {})
    raw = bytearray(p.read_bytes())
    raw[20] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(recordio.RecordFormatError):
        recordio.read_records(p)


def test_unsupported_dtype(tmp_path):
    with pytest.raises(recordio.RecordFormatError):
        recordio.write_records(tmp_path / "d.bin",
                               {"a": np.ones(2, dtype=np.float32)}, {})
