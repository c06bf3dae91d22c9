"""Ground-truth vector ingest: ESRI shapefiles, GeoJSON, tag filtering, projection.

Both parsers produce an immutable :class:`FeatureSet` of point and polygon
features. Polygon rings are normalized to the shapefile winding convention
(outer rings clockwise, holes counter-clockwise, in a y-up coordinate
system) so downstream geometry never has to re-derive ring roles.

Only shape types Point (1) and Polygon (5) are supported; anything else in a
binary file raises rather than silently skipping. GeoJSON is more forgiving:
unsupported geometry types are skipped and counted on the returned set.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .geocore import GeoPoint, GeoTransform, geo_to_pixel

Ring = tuple[tuple[float, float], ...]

SHAPE_POINT = 1
SHAPE_POLYGON = 5
_SHAPEFILE_MAGIC = 9994


class ShapefileError(ValueError):
    """Raised for malformed or unsupported shapefile bytes."""


class GeoJsonError(ValueError):
    """Raised for malformed GeoJSON documents."""


@dataclass(frozen=True)
class PointGeom:
    x: float
    y: float


@dataclass(frozen=True)
class PolygonGeom:
    """Ring list; every ring is closed (first vertex == last vertex)."""

    rings: tuple[Ring, ...]

    def vertices(self) -> Iterator[tuple[float, float]]:
        for ring in self.rings:
            yield from ring


@dataclass(frozen=True)
class Feature:
    geometry: PointGeom | PolygonGeom
    tags: tuple[tuple[str, str], ...] = ()

    def vertices(self) -> Iterator[tuple[float, float]]:
        if isinstance(self.geometry, PointGeom):
            yield (self.geometry.x, self.geometry.y)
        else:
            yield from self.geometry.vertices()


@dataclass(frozen=True)
class FeatureSet:
    """Ordered features plus their joint bounding box (None when empty).

    ``skipped`` is parse metadata: how many input features were dropped for
    carrying an unsupported geometry type.
    """

    features: tuple[Feature, ...] = ()
    bbox: tuple[float, float, float, float] | None = None
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self) -> Iterator[Feature]:
        return iter(self.features)


def make_feature_set(features: Iterable[Feature], skipped: int = 0) -> FeatureSet:
    """Build a FeatureSet with the bbox recomputed from the actual vertices."""
    feats = tuple(features)
    bbox = None
    for f in feats:
        for x, y in f.vertices():
            if bbox is None:
                bbox = (x, y, x, y)
            else:
                bbox = (min(bbox[0], x), min(bbox[1], y), max(bbox[2], x), max(bbox[3], y))
    return FeatureSet(features=feats, bbox=bbox, skipped=skipped)


def signed_area(ring: Ring) -> float:
    """Shoelace signed area of a closed ring; positive means counter-clockwise
    in a y-up system."""
    total = 0.0
    for (x1, y1), (x2, y2) in zip(ring, ring[1:]):
        total += x1 * y2 - x2 * y1
    return 0.5 * total


def _close_ring(points: list[tuple[float, float]], *, source: str) -> Ring:
    if points and points[0] != points[-1]:
        points = points + [points[0]]
    if len(points) < 4:
        raise ShapefileError(f"{source}: ring needs at least 3 distinct vertices")
    return tuple(points)


# --- ESRI shapefile (.shp / .dbf) ---------------------------------------------

def parse_shapefile(shp: bytes, dbf: bytes | None = None) -> FeatureSet:
    """Parse a .shp byte sequence, optionally joining .dbf fields as tags.

    Records are walked sequentially to the declared file length; the .shx
    index is never consulted. Supported shape types: Point and Polygon.
    """
    if len(shp) < 100:
        raise ShapefileError(f"main header needs 100 bytes, got {len(shp)}")
    (magic,) = struct.unpack(">i", shp[0:4])
    if magic != _SHAPEFILE_MAGIC:
        raise ShapefileError(f"bad magic: expected {_SHAPEFILE_MAGIC}, got {magic}")
    (length_words,) = struct.unpack(">i", shp[24:28])
    declared = length_words * 2
    if declared < 100:
        raise ShapefileError(f"declared file length {declared} bytes is shorter than the header")
    (shape_type,) = struct.unpack("<i", shp[32:36])
    if shape_type not in (SHAPE_POINT, SHAPE_POLYGON):
        raise ShapefileError(f"unsupported shape type {shape_type} (only Point=1 and Polygon=5)")

    features: list[Feature] = []
    offset = 100
    while offset < declared:
        if offset + 8 > len(shp) or offset + 8 > declared:
            raise ShapefileError(f"truncated record header at byte {offset}")
        record_no, content_words = struct.unpack(">ii", shp[offset : offset + 8])
        content_len = content_words * 2
        content = shp[offset + 8 : offset + 8 + content_len]
        if len(content) < content_len or offset + 8 + content_len > declared:
            raise ShapefileError(f"truncated record {record_no} at byte {offset}")
        features.append(_parse_record(content, shape_type, record_no))
        offset += 8 + content_len

    if dbf is not None:
        rows = _parse_dbf(dbf)
        if len(rows) != len(features):
            raise ShapefileError(
                f"shp has {len(features)} records but dbf has {len(rows)}"
            )
        features = [
            Feature(geometry=f.geometry, tags=tuple(row)) for f, row in zip(features, rows)
        ]
    return make_feature_set(features)


def _parse_record(content: bytes, file_shape_type: int, record_no: int) -> Feature:
    if len(content) < 4:
        raise ShapefileError(f"record {record_no}: content too short for a shape type")
    (shape,) = struct.unpack("<i", content[0:4])
    if shape != file_shape_type:
        raise ShapefileError(
            f"record {record_no}: unsupported shape type {shape} in a type-{file_shape_type} file"
        )
    if shape == SHAPE_POINT:
        if len(content) < 20:
            raise ShapefileError(f"record {record_no}: truncated point")
        x, y = struct.unpack("<2d", content[4:20])
        return Feature(geometry=PointGeom(x, y))
    return Feature(geometry=_parse_polygon_record(content, record_no))


def _parse_polygon_record(content: bytes, record_no: int) -> PolygonGeom:
    # Layout: type(4) + box(32) + numparts(4) + numpoints(4) + parts + points.
    if len(content) < 44:
        raise ShapefileError(f"record {record_no}: truncated polygon header")
    num_parts, num_points = struct.unpack("<2i", content[36:44])
    if num_parts <= 0 or num_points <= 0:
        raise ShapefileError(f"record {record_no}: empty polygon")
    parts_end = 44 + 4 * num_parts
    points_end = parts_end + 16 * num_points
    if len(content) < points_end:
        raise ShapefileError(f"record {record_no}: truncated polygon payload")
    parts = struct.unpack(f"<{num_parts}i", content[44:parts_end])
    flat = struct.unpack(f"<{2 * num_points}d", content[parts_end:points_end])
    points = [(flat[2 * i], flat[2 * i + 1]) for i in range(num_points)]

    rings: list[Ring] = []
    for k, start in enumerate(parts):
        stop = parts[k + 1] if k + 1 < num_parts else num_points
        if not 0 <= start < stop <= num_points:
            raise ShapefileError(f"record {record_no}: bad part index {start}")
        rings.append(_close_ring(points[start:stop], source=f"shp record {record_no}"))
    return PolygonGeom(rings=tuple(rings))


def _parse_dbf(dbf: bytes) -> list[list[tuple[str, str]]]:
    if len(dbf) < 32:
        raise ShapefileError(f"dbf header needs 32 bytes, got {len(dbf)}")
    (record_count,) = struct.unpack("<i", dbf[4:8])
    (header_size,) = struct.unpack("<H", dbf[8:10])
    (record_size,) = struct.unpack("<H", dbf[10:12])

    fields: list[tuple[str, str, int]] = []  # (name, type, length)
    offset = 32
    while offset < len(dbf) and dbf[offset] != 0x0D:
        desc = dbf[offset : offset + 32]
        if len(desc) < 32:
            raise ShapefileError("dbf field descriptors not terminated by 0x0D")
        name = desc[0:11].split(b"\x00", 1)[0].decode("latin-1")
        ftype = chr(desc[11])
        length = desc[16]
        fields.append((name, ftype, length))
        offset += 32

    rows: list[list[tuple[str, str]]] = []
    for i in range(record_count):
        start = header_size + i * record_size
        record = dbf[start : start + record_size]
        if len(record) < record_size:
            raise ShapefileError(f"dbf record {i} truncated")
        row: list[tuple[str, str]] = []
        pos = 1  # skip the deletion flag byte
        for name, ftype, length in fields:
            raw = record[pos : pos + length].decode("latin-1")
            value = raw.strip() if ftype in ("N", "F") else raw.rstrip()
            row.append((name, value))
            pos += length
        rows.append(row)
    return rows


# --- GeoJSON ------------------------------------------------------------------

def parse_geojson(text: str) -> FeatureSet:
    """Parse an RFC 7946 FeatureCollection (Point and Polygon geometries).

    Features with any other geometry type are dropped; the count of dropped
    features lands on ``FeatureSet.skipped``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GeoJsonError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise GeoJsonError("document is not a FeatureCollection")
    raw_features = doc.get("features")
    if not isinstance(raw_features, list):
        raise GeoJsonError("FeatureCollection has no features array")

    features: list[Feature] = []
    skipped = 0
    for i, raw in enumerate(raw_features):
        if not isinstance(raw, dict):
            raise GeoJsonError(f"feature {i} is not an object")
        geometry = raw.get("geometry") or {}
        gtype = geometry.get("type")
        if gtype == "Point":
            coords = geometry.get("coordinates")
            if not isinstance(coords, list) or len(coords) < 2:
                raise GeoJsonError(f"feature {i}: malformed Point coordinates")
            geom: PointGeom | PolygonGeom = PointGeom(float(coords[0]), float(coords[1]))
        elif gtype == "Polygon":
            geom = _parse_geojson_polygon(geometry.get("coordinates"), i)
        else:
            skipped += 1
            continue
        features.append(Feature(geometry=geom, tags=_tags_from_properties(raw.get("properties"))))
    return make_feature_set(features, skipped=skipped)


def _parse_geojson_polygon(coords: object, index: int) -> PolygonGeom:
    if not isinstance(coords, list) or not coords:
        raise GeoJsonError(f"feature {index}: malformed Polygon coordinates")
    rings: list[Ring] = []
    for ring_idx, raw_ring in enumerate(coords):
        if not isinstance(raw_ring, list) or len(raw_ring) < 3:
            raise GeoJsonError(f"feature {index}: ring {ring_idx} needs at least 3 positions")
        points = [(float(p[0]), float(p[1])) for p in raw_ring]
        if points[0] != points[-1]:
            points.append(points[0])
        if len(points) < 4:
            raise GeoJsonError(f"feature {index}: ring {ring_idx} needs at least 3 distinct vertices")
        ring = tuple(points)
        # Normalize to the shapefile convention: ring 0 is the outer ring and
        # must wind clockwise (negative signed area); holes the other way.
        sa = signed_area(ring)
        if ring_idx == 0:
            if sa > 0:
                ring = ring[::-1]
        elif sa < 0:
            ring = ring[::-1]
        rings.append(ring)
    return PolygonGeom(rings=tuple(rings))


def _tags_from_properties(properties: object) -> tuple[tuple[str, str], ...]:
    if not isinstance(properties, dict):
        return ()
    tags = []
    for key, value in properties.items():
        text = value if isinstance(value, str) else json.dumps(value)
        tags.append((str(key), text))
    return tuple(tags)


def emit_geojson(fs: FeatureSet) -> str:
    """Serialize a FeatureSet back to a GeoJSON FeatureCollection."""
    out = []
    for f in fs:
        if isinstance(f.geometry, PointGeom):
            geometry = {"type": "Point", "coordinates": [f.geometry.x, f.geometry.y]}
        else:
            geometry = {
                "type": "Polygon",
                "coordinates": [[list(p) for p in ring] for ring in f.geometry.rings],
            }
        out.append(
            {"type": "Feature", "geometry": geometry, "properties": dict(f.tags)}
        )
    return json.dumps({"type": "FeatureCollection", "features": out})


# --- Filtering and projection -------------------------------------------------

def filter_by_tag(fs: FeatureSet, key: str, value: str) -> FeatureSet:
    """Keep exactly the features carrying the (key, value) tag, in order."""
    return make_feature_set(f for f in fs if (key, value) in f.tags)


def project_features(fs: FeatureSet, gt: GeoTransform) -> FeatureSet:
    """Replace every geographic vertex by its pixel position under ``gt``."""

    def to_pixel(x: float, y: float) -> tuple[float, float]:
        p = geo_to_pixel(gt, GeoPoint(x, y))
        return (p.col, p.row)

    projected = []
    for f in fs:
        if isinstance(f.geometry, PointGeom):
            geom: PointGeom | PolygonGeom = PointGeom(*to_pixel(f.geometry.x, f.geometry.y))
        else:
            geom = PolygonGeom(
                rings=tuple(
                    tuple(to_pixel(x, y) for x, y in ring) for ring in f.geometry.rings
                )
            )
        projected.append(Feature(geometry=geom, tags=f.tags))
    return make_feature_set(projected)
