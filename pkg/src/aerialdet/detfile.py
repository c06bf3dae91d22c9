"""Line-delimited JSON detection files.

One record per tile:

    {"tile_id": "r00_c01", "detections": [{"bbox": [x1, y1, x2, y2],
     "score": 0.97, "label": "coconut", "mask": [x, y, ...] | null}]}

Masks are flat vertex lists; the closing duplicate vertex is optional on
input and omitted on output. Tiles the inference stage could not process
carry ``"failed": true`` and an ``"error"`` string instead of detections.
An optional ``"seconds"`` field records per-tile wall time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .detpost import Box, Detection
from .vector_io import Ring


class DetectionFileError(ValueError):
    """Raised for records that do not match the detection schema."""


@dataclass(frozen=True)
class TileDetections:
    tile_id: str
    detections: tuple[Detection, ...]
    failed: bool = False
    error: str | None = None
    seconds: float | None = None


def _mask_from_flat(values: object, where: str) -> Ring:
    if not isinstance(values, list) or len(values) % 2 != 0:
        raise DetectionFileError(f"{where}: mask must be a flat [x, y, ...] list")
    points = [
        (float(values[i]), float(values[i + 1])) for i in range(0, len(values), 2)
    ]
    if len(points) >= 2 and points[0] == points[-1]:
        points = points[:-1]
    if len(points) < 3:
        raise DetectionFileError(f"{where}: mask needs at least 3 distinct vertices")
    points.append(points[0])
    return tuple(points)


def detection_from_obj(obj: object, where: str) -> Detection:
    if not isinstance(obj, dict):
        raise DetectionFileError(f"{where}: detection must be an object")
    bbox = obj.get("bbox")
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise DetectionFileError(f"{where}: bbox must be [x1, y1, x2, y2]")
    try:
        coords = [float(v) for v in bbox]
    except (TypeError, ValueError) as exc:
        raise DetectionFileError(f"{where}: bbox values must be numeric") from exc
    score = obj.get("score")
    if not isinstance(score, (int, float)) or isinstance(score, bool):
        raise DetectionFileError(f"{where}: score must be numeric")
    label = obj.get("label", "coconut")
    if not isinstance(label, str):
        raise DetectionFileError(f"{where}: label must be a string")
    mask = obj.get("mask")
    ring = None if mask is None else _mask_from_flat(mask, where)
    try:
        return Detection(box=Box(*coords), score=float(score), label=label, mask=ring)
    except ValueError as exc:
        raise DetectionFileError(f"{where}: {exc}") from exc


def read_detections(text: str) -> list[TileDetections]:
    """Parse a detection file, validating every record.

    Errors carry the 1-based record index so a bad line in a long file can
    be found.
    """
    tiles = []
    seen: set[str] = set()
    for index, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        where = f"record {index}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DetectionFileError(f"{where}: not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise DetectionFileError(f"{where}: must be an object")
        tile_id = obj.get("tile_id")
        if not isinstance(tile_id, str) or not tile_id:
            raise DetectionFileError(f"{where}: tile_id must be a non-empty string")
        if tile_id in seen:
            raise DetectionFileError(f"{where}: duplicate tile_id {tile_id!r}")
        seen.add(tile_id)
        failed = bool(obj.get("failed", False))
        error = obj.get("error")
        if error is not None and not isinstance(error, str):
            raise DetectionFileError(f"{where}: error must be a string")
        seconds = obj.get("seconds")
        if seconds is not None and (not isinstance(seconds, (int, float)) or isinstance(seconds, bool)):
            raise DetectionFileError(f"{where}: seconds must be numeric")
        raw_dets = obj.get("detections", [])
        if not isinstance(raw_dets, list):
            raise DetectionFileError(f"{where}: detections must be a list")
        detections = tuple(
            detection_from_obj(d, f"{where} detection {i}") for i, d in enumerate(raw_dets)
        )
        if failed and detections:
            raise DetectionFileError(f"{where}: failed tiles cannot carry detections")
        tiles.append(
            TileDetections(
                tile_id=tile_id,
                detections=detections,
                failed=failed,
                error=error,
                seconds=None if seconds is None else float(seconds),
            )
        )
    return tiles


def detection_to_obj(det: Detection) -> dict:
    mask = None
    if det.mask is not None:
        mask = [v for point in det.mask[:-1] for v in point]
    return {
        "bbox": [det.box.x1, det.box.y1, det.box.x2, det.box.y2],
        "score": det.score,
        "label": det.label,
        "mask": mask,
    }


def write_detections(tiles: list[TileDetections]) -> str:
    """Serialize tiles to detection-file text, one JSON record per line."""
    lines = []
    for tile in tiles:
        record: dict = {"tile_id": tile.tile_id}
        if tile.failed:
            record["failed"] = True
            record["error"] = tile.error or "inference failed"
            record["detections"] = []
        else:
            record["detections"] = [detection_to_obj(d) for d in tile.detections]
        if tile.seconds is not None:
            record["seconds"] = tile.seconds
        lines.append(json.dumps(record))
    return "".join(line + "\n" for line in lines)


def to_mapping(tiles: list[TileDetections]) -> dict[str, list[Detection]]:
    """Detections keyed by tile for the evaluation stage; failed tiles map
    to empty lists so their ground truth still counts as missed."""
    return {t.tile_id: list(t.detections) for t in tiles}
