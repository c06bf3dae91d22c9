"""Stub detector: canned detections from a fixture file, no model needed.

The fixture is line-delimited JSON in the detection-file schema — one
``{"tile_id": ..., "detections": [...]}`` object per line. Every request
for a known tile gets that tile's detections (the request's confidence
floor and instance cap still apply); unknown tiles get an empty list. The
image payload is validated but its pixels are ignored, so responses are
fully deterministic.
"""

from __future__ import annotations

import json
from pathlib import Path

from .protocol import Detection, Ring


class FixtureError(ValueError):
    """A fixture file that does not follow the detection schema."""


def _ring_from_flat(values: object, where: str) -> Ring:
    if not isinstance(values, list) or len(values) % 2 != 0:
        raise FixtureError(f"{where}: mask must be a flat [x, y, ...] list")
    try:
        points = [
            (float(values[i]), float(values[i + 1])) for i in range(0, len(values), 2)
        ]
    except (TypeError, ValueError) as exc:
        raise FixtureError(f"{where}: mask values must be numeric") from exc
    if len(points) >= 2 and points[0] == points[-1]:
        points = points[:-1]
    if len(points) < 3:
        raise FixtureError(f"{where}: mask needs at least 3 distinct vertices")
    points.append(points[0])
    return tuple(points)


def _detection_from_obj(obj: object, where: str) -> Detection:
    if not isinstance(obj, dict):
        raise FixtureError(f"{where}: detection must be an object")
    bbox = obj.get("bbox")
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise FixtureError(f"{where}: bbox must be [x1, y1, x2, y2]")
    try:
        coords = tuple(float(v) for v in bbox)
    except (TypeError, ValueError) as exc:
        raise FixtureError(f"{where}: bbox values must be numeric") from exc
    score = obj.get("score")
    if not isinstance(score, (int, float)) or isinstance(score, bool):
        raise FixtureError(f"{where}: score must be numeric")
    label = obj.get("label", "coconut")
    if not isinstance(label, str):
        raise FixtureError(f"{where}: label must be a string")
    mask = obj.get("mask")
    ring = None if mask is None else _ring_from_flat(mask, where)
    try:
        return Detection(bbox=coords, score=float(score), label=label, ring=ring)
    except ValueError as exc:
        raise FixtureError(f"{where}: {exc}") from exc


def load_fixture(path: str | Path) -> dict[str, tuple[Detection, ...]]:
    """Parse a fixture file, validating every record up front."""
    canned: dict[str, tuple[Detection, ...]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for index, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        where = f"record {index}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FixtureError(f"{where}: not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise FixtureError(f"{where}: must be an object")
        tile_id = obj.get("tile_id")
        if not isinstance(tile_id, str) or not tile_id:
            raise FixtureError(f"{where}: tile_id must be a non-empty string")
        if tile_id in canned:
            raise FixtureError(f"{where}: duplicate tile_id {tile_id!r}")
        raw = obj.get("detections", [])
        if not isinstance(raw, list):
            raise FixtureError(f"{where}: detections must be a list")
        canned[tile_id] = tuple(
            _detection_from_obj(d, f"{where} detection {i}") for i, d in enumerate(raw)
        )
    return canned


class StubDetector:
    """Replays canned detections keyed by tile id."""

    def __init__(self, canned: dict[str, tuple[Detection, ...]] | None = None):
        self._canned = dict(canned or {})

    def detect(
        self, tile_id: str, png_bytes: bytes, min_confidence: float, max_instances: int
    ) -> list[Detection]:
        return list(self._canned.get(tile_id, ()))
