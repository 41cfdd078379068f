import struct

import numpy as np
import pytest

from photonlink import tagio
from photonlink.errors import FormatError
from photonlink.photonsim import TagStream


@pytest.fixture
def stream():
    return TagStream.from_timestamps([0, 10, 10, 2**40, 2**63 + 5], {"seed": 1, "note": "x"})


def test_qtt1_layout(tmp_path, stream):
    p = tmp_path / "t.qtt1"
    tagio.write_qtt1(p, stream)
    raw = p.read_bytes()
    assert raw[:8] == b"QTT1\x00\x00\x00\x00"
    (n,) = struct.unpack("<I", raw[8:12])
    body = raw[12 + n:]
    assert len(body) == 9 * len(stream)
    # second record: channel byte then LE uint64
    assert body[9] == 0
    assert struct.unpack("<Q", body[10:18])[0] == 10
    assert struct.unpack("<Q", body[-8:])[0] == 2**63 + 5


def test_qtt1_roundtrip(tmp_path, stream):
    p = tmp_path / "t.qtt1"
    tagio.write_qtt1(p, stream)
    back = tagio.read_tags(p)
    assert np.array_equal(back.records, stream.records)
    assert back.metadata == stream.metadata


def test_csv_roundtrip(tmp_path, stream):
    p = tmp_path / "t.csv"
    tagio.write_csv(p, stream)
    assert p.read_text().splitlines()[0] == "channel,timestamp_ps"
    back = tagio.read_tags(p)
    assert np.array_equal(back.records, stream.records)


def test_bad_magic(tmp_path, stream):
    p = tmp_path / "t.qtt1"
    tagio.write_qtt1(p, stream)
    raw = bytearray(p.read_bytes())
    raw[3] = ord("X")
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        tagio.read_tags(p)


def test_truncated_record(tmp_path, stream):
    p = tmp_path / "t.qtt1"
    tagio.write_qtt1(p, stream)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(FormatError, match="multiple"):
        tagio.read_qtt1(p)


def test_unsorted_rejected(tmp_path):
    p = tmp_path / "t.qtt1"
    tagio.write_qtt1(p, TagStream.from_timestamps([5, 3]))
    with pytest.raises(FormatError, match="non-decreasing"):
        tagio.read_qtt1(p)


def test_empty_stream(tmp_path):
    p = tmp_path / "e.qtt1"
    tagio.write_qtt1(p, TagStream.from_timestamps([]))
    assert len(tagio.read_qtt1(p)) == 0
