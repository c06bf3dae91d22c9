"""Wire protocol: request validation, limits, and response assembly.

One request per exchange:

    {"protocol": 1, "tile_id": str, "image": base64-PNG,
     "min_confidence": float, "max_instances": int}

answered either with the detection list

    {"protocol": 1, "tile_id": str, "detections": [
        {"bbox": [x1, y1, x2, y2], "score": s, "label": str,
         "mask": [x, y, ...] | null}, ...]}

or with ``{"protocol": 1, "tile_id": str, "error": str}``. Any request that
cannot be served — wrong protocol version, undecodable image, missing
limits — gets an error response on the same connection; the adapter never
drops the channel over one bad request.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field

PROTOCOL_VERSION = 1
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

Ring = tuple[tuple[float, float], ...]


class RequestError(ValueError):
    """A request that cannot be served; carries the tile id when known."""

    def __init__(self, message: str, tile_id: str | None = None):
        super().__init__(message)
        self.tile_id = tile_id


class ImageError(ValueError):
    """An image payload the detector cannot decode."""


@dataclass(frozen=True)
class Detection:
    """One instance in image pixel coordinates, mask as a polygon ring."""

    bbox: tuple[float, float, float, float]
    score: float
    label: str = "coconut"
    ring: Ring | None = None

    def __post_init__(self) -> None:
        x1, y1, x2, y2 = self.bbox
        if not all(math.isfinite(v) for v in self.bbox):
            raise ValueError("bbox coordinates must be finite")
        if x2 <= x1 or y2 <= y1:
            raise ValueError(f"empty bbox ({x1}, {y1}, {x2}, {y2})")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.ring is not None and (len(self.ring) < 4 or self.ring[0] != self.ring[-1]):
            raise ValueError("ring must be closed with at least 3 distinct vertices")


def detection_to_obj(det: Detection) -> dict:
    mask = None
    if det.ring is not None:
        mask = [coord for point in det.ring for coord in point]
    return {
        "bbox": list(det.bbox),
        "score": det.score,
        "label": det.label,
        "mask": mask,
    }


@dataclass(frozen=True)
class Request:
    tile_id: str
    png_bytes: bytes = field(repr=False)
    min_confidence: float
    max_instances: int


def parse_request(obj: object) -> Request:
    if not isinstance(obj, dict):
        raise RequestError("request must be a JSON object")
    tile_id = obj.get("tile_id")
    echo = tile_id if isinstance(tile_id, str) and tile_id else None
    if obj.get("protocol") != PROTOCOL_VERSION:
        raise RequestError(
            f"unsupported protocol version {obj.get('protocol')!r}", echo
        )
    if echo is None:
        raise RequestError("request has no tile_id")
    try:
        png_bytes = base64.b64decode(obj["image"], validate=True)
    except (KeyError, ValueError, TypeError) as exc:
        raise RequestError("request image is not valid base64", echo) from exc
    if not png_bytes.startswith(PNG_SIGNATURE):
        raise RequestError("request image is not a PNG", echo)
    try:
        min_confidence = float(obj["min_confidence"])
        max_instances = int(obj["max_instances"])
    except (KeyError, ValueError, TypeError) as exc:
        raise RequestError("request limits missing or malformed", echo) from exc
    if not 0.0 <= min_confidence <= 1.0:
        raise RequestError(f"min_confidence {min_confidence} outside [0, 1]", echo)
    if max_instances < 0:
        raise RequestError(f"max_instances {max_instances} is negative", echo)
    return Request(echo, png_bytes, min_confidence, max_instances)


def apply_limits(
    detections: list[Detection], min_confidence: float, max_instances: int
) -> list[Detection]:
    """Filter by the request's confidence floor, sort, and cap the count.

    This is the only thresholding the adapter performs; suppression and any
    stricter filtering belong to the pipeline on the other end of the wire.
    """
    kept = [d for d in detections if d.score >= min_confidence]
    kept.sort(key=lambda d: (-d.score, d.bbox))
    return kept[:max_instances]


def error_response(tile_id: str | None, message: str) -> dict:
    payload: dict = {"protocol": PROTOCOL_VERSION, "error": message}
    if tile_id is not None:
        payload["tile_id"] = tile_id
    return payload


def handle_request(obj: object, detector) -> dict:
    """Answer one decoded request with a response object, never raising.

    ``detector`` provides ``detect(tile_id, png_bytes, min_confidence,
    max_instances) -> list[Detection]``; whatever it returns is re-limited
    here so every detector honours the request the same way.
    """
    try:
        request = parse_request(obj)
    except RequestError as exc:
        return error_response(exc.tile_id, str(exc))
    try:
        detections = detector.detect(
            request.tile_id,
            request.png_bytes,
            request.min_confidence,
            request.max_instances,
        )
        detections = apply_limits(
            detections, request.min_confidence, request.max_instances
        )
    except ImageError as exc:
        return error_response(request.tile_id, f"image not decodable: {exc}")
    except Exception as exc:  # a bad tile must not take down the adapter
        return error_response(request.tile_id, f"inference failed: {exc}")
    return {
        "protocol": PROTOCOL_VERSION,
        "tile_id": request.tile_id,
        "detections": [detection_to_obj(d) for d in detections],
    }
