"""Reading and writing time-tag files.

QTT1 layout::

    8 bytes   magic  b"QTT1\\0\\0\\0\\0"
    4 bytes   header length n, little-endian uint32
    n bytes   UTF-8 JSON header (sorted keys)
    9 bytes   per record: uint8 channel, uint64 LE timestamp in ps

CSV export has a ``channel,timestamp_ps`` header and one record per line.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .photonsim import TAG_DTYPE, TagStream

MAGIC = b"QTT1\x00\x00\x00\x00"
RECORD_SIZE = TAG_DTYPE.itemsize
assert RECORD_SIZE == 9


def encode_header(metadata: dict) -> bytes:
    return json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_qtt1(path, stream: TagStream) -> None:
    header = encode_header(stream.metadata)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(stream.records, dtype=TAG_DTYPE).tobytes())


def read_qtt1(path) -> TagStream:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise FormatError(f"{path}: not a QTT1 file (bad magic {data[:8]!r})")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    (n,) = struct.unpack_from("<I", data, 8)
    body_start = 12 + n
    if body_start > len(data):
        raise FormatError(f"{path}: header length {n} exceeds file size")
    try:
        meta = json.loads(data[12:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from None
    body = data[body_start:]
    if len(body) % RECORD_SIZE:
        raise FormatError(f"{path}: record block of {len(body)} bytes is not a multiple of {RECORD_SIZE}")
    records = np.frombuffer(body, dtype=TAG_DTYPE).copy()
    ts = records["timestamp_ps"]
    if ts.size > 1 and np.any(ts[1:] < ts[:-1]):
        raise FormatError(f"{path}: timestamps are not non-decreasing")
    return TagStream(records, meta)


def write_csv(path, stream: TagStream) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel", "timestamp_ps"])
        w.writerows(zip(stream.records["channel"].tolist(), stream.records["timestamp_ps"].tolist()))


def read_csv(path) -> TagStream:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["channel", "timestamp_ps"]:
            raise FormatError(f"{path}: expected header 'channel,timestamp_ps', got {header!r}")
        rows = [r for r in reader if r]
    try:
        ch = np.array([int(r[0]) for r in rows], dtype=np.uint8)
        ts = np.array([int(r[1]) for r in rows], dtype=np.uint64)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    rec = np.zeros(len(rows), dtype=TAG_DTYPE)
    rec["channel"] = ch
    rec["timestamp_ps"] = ts
    if ts.size > 1 and np.any(ts[1:] < ts[:-1]):
        raise FormatError(f"{path}: timestamps are not non-decreasing")
    return TagStream(rec, {})


def read_tags(path) -> TagStream:
    """Read a QTT1 or CSV tag file, chosen by the leading bytes."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == MAGIC:
        return read_qtt1(path)
    if head.startswith(b"channel"):
        return read_csv(path)
    if head[:4] == b"QTT1" or Path(path).suffix.lower() == ".qtt1":
        raise FormatError(f"{path}: not a QTT1 file (bad magic {head!r})")
    raise FormatError(f"{path}: unrecognized tag file format")
