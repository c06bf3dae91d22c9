"""Shared fixtures: hand-assembled shapefile and dBASE bytes.

The builders below follow the published binary layouts directly (big-endian
file code and lengths, little-endian shape data; 32-byte dBASE field
descriptors terminated by 0x0D) so the parser under test is checked against
an independent encoding, not against itself.
"""

from __future__ import annotations

import struct
from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent / "data"


def shp_main_header(shape_type: int, total_file_bytes: int, bbox=(0.0, 0.0, 0.0, 0.0)) -> bytes:
    header = struct.pack(">i", 9994)
    header += b"\x00" * 20
    header += struct.pack(">i", total_file_bytes // 2)
    header += struct.pack("<i", 1000)
    header += struct.pack("<i", shape_type)
    header += struct.pack("<4d", *bbox)
    header += struct.pack("<4d", 0.0, 0.0, 0.0, 0.0)
    assert len(header) == 100
    return header


def polygon_record(record_no: int, rings: list[list[tuple[float, float]]]) -> bytes:
    points = [p for ring in rings for p in ring]
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    content = struct.pack("<i", 5)
    content += struct.pack("<4d", min(xs), min(ys), max(xs), max(ys))
    content += struct.pack("<2i", len(rings), len(points))
    start = 0
    for ring in rings:
        content += struct.pack("<i", start)
        start += len(ring)
    for x, y in points:
        content += struct.pack("<2d", x, y)
    return struct.pack(">2i", record_no, len(content) // 2) + content


def point_record(record_no: int, x: float, y: float) -> bytes:
    content = struct.pack("<i", 1) + struct.pack("<2d", x, y)
    return struct.pack(">2i", record_no, len(content) // 2) + content


def build_shp(shape_type: int, records: list[bytes]) -> bytes:
    body = b"".join(records)
    return shp_main_header(shape_type, 100 + len(body)) + body


# A closed unit square, wound clockwise in a y-up system, as the outer ring
# of a single polygon record.
UNIT_SQUARE_RING = [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0), (0.0, 0.0)]


@pytest.fixture
def unit_square_shp() -> bytes:
    return build_shp(5, [polygon_record(1, [UNIT_SQUARE_RING])])


def build_dbf(fields: list[tuple[str, str, int]], rows: list[list[str]]) -> bytes:
    header_size = 32 + 32 * len(fields) + 1
    record_size = 1 + sum(length for _, _, length in fields)
    out = bytes([0x03, 95, 7, 26])
    out += struct.pack("<i", len(rows))
    out += struct.pack("<2H", header_size, record_size)
    out += b"\x00" * 20
    for name, ftype, length in fields:
        desc = name.encode("latin-1")[:11].ljust(11, b"\x00")
        desc += ftype.encode("ascii")
        desc += b"\x00" * 4
        desc += bytes([length, 0])
        desc += b"\x00" * 14
        assert len(desc) == 32
        out += desc
    out += b"\x0d"
    for row in rows:
        out += b" "
        for value, (_, ftype, length) in zip(row, fields):
            encoded = value.encode("latin-1")
            if ftype in ("N", "F"):
                out += encoded.rjust(length, b" ")
            else:
                out += encoded.ljust(length, b" ")
    out += b"\x1a"
    return out
