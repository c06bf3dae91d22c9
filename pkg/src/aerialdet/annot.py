"""Read and write tile annotations in the VGG Image Annotator JSON format.

The emitted document is the plain region-export shape: a dict keyed by
``filename + str(filesize)``, one entry per tile. :func:`parse_via` also
accepts a full VIA 2.x project export (the metadata lives under
``_via_img_metadata``). Region shapes other than polygon/rect/circle are
skipped and counted rather than rejected, since annotators mix shapes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import PurePath
from typing import Mapping

from .tiler import TileAnnotation
from .vector_io import Ring, signed_area

DEFAULT_LABEL = "coconut"
DEFAULT_LABEL_KEY = "label"

# Polygons outside this area band get flagged by the lint pass: the band is
# the square of the detector's smallest and largest anchor scales.
LINT_MIN_AREA = 25.0
LINT_MAX_AREA = 130.0 * 130.0

_CIRCLE_SEGMENTS = 16


class ViaError(ValueError):
    """Raised for malformed VIA documents."""


@dataclass(frozen=True)
class LintFinding:
    tile_id: str
    polygon_index: int
    area: float
    reason: str


def emit_via(
    tiles: list[TileAnnotation],
    filenames: Mapping[str, str],
    filesizes: Mapping[str, int] | None = None,
    label_key: str = DEFAULT_LABEL_KEY,
) -> str:
    """Serialize tile annotations to VIA JSON text.

    One entry per tile, polygons as integer-rounded vertex arrays with the
    closing duplicate vertex omitted, labels under ``label_key``.
    """
    sizes = filesizes or {}
    doc: dict[str, dict] = {}
    for tile in tiles:
        if tile.tile_id not in filenames:
            raise ViaError(f"no filename mapping for tile {tile.tile_id!r}")
        filename = filenames[tile.tile_id]
        size = int(sizes.get(tile.tile_id, 0))
        regions = []
        for ring, label in tile.polygons:
            points = ring[:-1] if len(ring) >= 2 and ring[0] == ring[-1] else ring
            regions.append(
                {
                    "shape_attributes": {
                        "name": "polygon",
                        "all_points_x": [max(0, round(x)) for x, _ in points],
                        "all_points_y": [max(0, round(y)) for _, y in points],
                    },
                    "region_attributes": {label_key: label},
                }
            )
        doc[f"{filename}{size}"] = {
            "filename": filename,
            "size": size,
            "regions": regions,
            "file_attributes": {},
        }
    return json.dumps(doc, indent=2)


def parse_via(
    text: str,
    label_key: str = DEFAULT_LABEL_KEY,
    default_label: str = DEFAULT_LABEL,
) -> tuple[list[TileAnnotation], int]:
    """Parse VIA JSON into tile annotations.

    Rect regions become their 4-corner ring and circles a 16-gon; other
    shapes are skipped. Returns (annotations, skipped shape count). The tile
    id is the annotated file's name without its extension.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ViaError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ViaError("VIA document must be a JSON object")
    if "_via_img_metadata" in doc:
        entries = doc["_via_img_metadata"]
        if not isinstance(entries, dict):
            raise ViaError("_via_img_metadata must be an object")
    else:
        entries = {k: v for k, v in doc.items() if not k.startswith("_via_")}

    tiles: list[TileAnnotation] = []
    skipped = 0
    for key, entry in entries.items():
        if not isinstance(entry, dict) or "filename" not in entry:
            raise ViaError(f"entry {key!r} has no filename")
        tile_id = PurePath(str(entry["filename"])).stem
        raw_regions = entry.get("regions", [])
        if isinstance(raw_regions, dict):  # VIA 1.x indexes regions by string key
            raw_regions = list(raw_regions.values())
        if not isinstance(raw_regions, list):
            raise ViaError(f"entry {key!r}: regions must be a list")
        polygons: list[tuple[Ring, str]] = []
        for i, region in enumerate(raw_regions):
            ring = _region_ring(region, f"{key!r} region {i}")
            if ring is None:
                skipped += 1
                continue
            attrs = region.get("region_attributes") or {}
            label = attrs.get(label_key) or default_label
            polygons.append((ring, str(label)))
        tiles.append(TileAnnotation(tile_id=tile_id, polygons=tuple(polygons)))
    return tiles, skipped


def _region_ring(region: object, where: str) -> Ring | None:
    if not isinstance(region, dict):
        raise ViaError(f"{where}: region must be an object")
    shape = region.get("shape_attributes")
    if not isinstance(shape, dict):
        raise ViaError(f"{where}: missing shape_attributes")
    name = shape.get("name")
    if name == "polygon":
        xs = shape.get("all_points_x")
        ys = shape.get("all_points_y")
        if not isinstance(xs, list) or not isinstance(ys, list) or len(xs) != len(ys):
            raise ViaError(f"{where}: all_points_x/all_points_y must be same-length lists")
        if len(xs) < 3:
            raise ViaError(f"{where}: polygon needs at least 3 vertices")
        points = [(float(x), float(y)) for x, y in zip(xs, ys)]
        if points[0] != points[-1]:
            points.append(points[0])
        return tuple(points)
    if name == "rect":
        x, y = float(shape["x"]), float(shape["y"])
        w, h = float(shape["width"]), float(shape["height"])
        return ((x, y), (x + w, y), (x + w, y + h), (x, y + h), (x, y))
    if name == "circle":
        cx, cy, r = float(shape["cx"]), float(shape["cy"]), float(shape["r"])
        points = [
            (
                cx + r * math.cos(2.0 * math.pi * k / _CIRCLE_SEGMENTS),
                cy + r * math.sin(2.0 * math.pi * k / _CIRCLE_SEGMENTS),
            )
            for k in range(_CIRCLE_SEGMENTS)
        ]
        points.append(points[0])
        return tuple(points)
    return None


def lint_annotations(tiles: list[TileAnnotation]) -> list[LintFinding]:
    """Flag suspect ground truth without rejecting it.

    Annotators mislabel things (shadows drawn as trees, stray clicks); the
    parse stage stays permissive and this pass reports polygons whose area
    falls outside the plausible crown range.
    """
    findings = []
    for tile in tiles:
        for i, (ring, _label) in enumerate(tile.polygons):
            area = abs(signed_area(ring))
            if area < LINT_MIN_AREA:
                findings.append(
                    LintFinding(tile.tile_id, i, area, f"area {area:.1f} px^2 below {LINT_MIN_AREA:g}")
                )
            elif area > LINT_MAX_AREA:
                findings.append(
                    LintFinding(tile.tile_id, i, area, f"area {area:.1f} px^2 above {LINT_MAX_AREA:g}")
                )
    return findings
