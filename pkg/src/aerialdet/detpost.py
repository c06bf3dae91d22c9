"""Detection post-processing: anchors, IoU, mask rasterization, NMS.

Everything here is pure geometry on already-produced detections; no model
code. Boxes are (x1, y1, x2, y2) in pixel coordinates, scores in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .vector_io import Ring

# Anchor side lengths in pixels, spanning canopy diameters of roughly 0.8 m
# to 10 m at an 8 cm ground sampling distance.
DEFAULT_ANCHOR_SCALES = (10.0, 19.0, 36.0, 69.0, 130.0)
DEFAULT_ANCHOR_RATIOS = (1.0,)
DEFAULT_ANCHOR_STRIDE = 32

DEFAULT_MIN_CONFIDENCE = 0.9
DEFAULT_MAX_INSTANCES = 100
DEFAULT_NMS_IOU = 0.3


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with x1 <= x2 and y1 <= y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x1, self.y1, self.x2, self.y2)):
            raise ValueError("box coordinates must be finite")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"degenerate box: ({self.x1}, {self.y1}, {self.x2}, {self.y2})")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float
    label: str = "coconut"
    mask: Ring | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.mask is not None:
            if len(self.mask) < 4 or self.mask[0] != self.mask[-1]:
                raise ValueError("mask must be a closed ring of at least 4 vertices")


@dataclass(frozen=True)
class AnchorSpec:
    """Anchor geometry for a single feature map."""

    scales: tuple[float, ...] = DEFAULT_ANCHOR_SCALES
    ratios: tuple[float, ...] = DEFAULT_ANCHOR_RATIOS
    stride: int = DEFAULT_ANCHOR_STRIDE

    def __post_init__(self) -> None:
        if not self.scales:
            raise ValueError("at least one anchor scale required")
        if any(s <= 0 for s in self.scales):
            raise ValueError("anchor scales must be positive")
        if tuple(sorted(self.scales)) != self.scales:
            raise ValueError("anchor scales must be sorted ascending")
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ValueError("anchor ratios must be positive")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")


@dataclass(frozen=True)
class BitMask:
    """Dense boolean mask for one tile or window."""

    width: int
    height: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.bits.shape != (self.height, self.width):
            raise ValueError(f"bits shape {self.bits.shape} does not match {self.height}x{self.width}")

    def count(self) -> int:
        return int(self.bits.sum())


def feature_map_shape(image_w: int, image_h: int, stride: int) -> tuple[int, int]:
    """Feature map size (w, h) for an image downsampled by ``stride``."""
    if stride < 1:
        raise ValueError("stride must be at least 1")
    return (image_w + stride - 1) // stride, (image_h + stride - 1) // stride


def generate_anchors(
    image_w: int, image_h: int, spec: AnchorSpec = AnchorSpec(), clip: bool = True
) -> list[Box]:
    """All anchors for one image, cell-major then by scale then ratio.

    Each anchor of scale s and ratio r is s*sqrt(r) wide and s/sqrt(r) tall,
    centered on its feature cell at ((i + 0.5) * stride, (j + 0.5) * stride).
    """
    fw, fh = feature_map_shape(image_w, image_h, spec.stride)
    anchors = []
    for j in range(fh):
        cy = (j + 0.5) * spec.stride
        for i in range(fw):
            cx = (i + 0.5) * spec.stride
            for scale in spec.scales:
                for ratio in spec.ratios:
                    w = scale * math.sqrt(ratio)
                    h = scale / math.sqrt(ratio)
                    x1, y1 = cx - w / 2.0, cy - h / 2.0
                    x2, y2 = cx + w / 2.0, cy + h / 2.0
                    if clip:
                        x1 = min(max(0.0, x1), float(image_w))
                        x2 = min(max(0.0, x2), float(image_w))
                        y1 = min(max(0.0, y1), float(image_h))
                        y2 = min(max(0.0, y2), float(image_h))
                    anchors.append(Box(x1, y1, x2, y2))
    return anchors


def box_iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0.0 when the union is empty."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        inter = 0.0
    else:
        inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def rasterize_polygon(ring: Ring, width: int, height: int) -> BitMask:
    """Scanline-fill a polygon onto a pixel grid.

    A pixel (i, j) is set iff its center (i + 0.5, j + 0.5) is inside the
    polygon under the even-odd rule. Spans are half-open on the right so
    abutting polygons do not double-fill shared edges.
    """
    if width < 1 or height < 1:
        raise ValueError("mask dimensions must be positive")
    if len(ring) < 4 or ring[0] != ring[-1]:
        raise ValueError("ring must be closed with at least 4 vertices")
    bits = np.zeros((height, width), dtype=bool)
    ys = [p[1] for p in ring]
    j_lo = max(0, int(math.floor(min(ys) - 0.5)))
    j_hi = min(height, int(math.ceil(max(ys))))
    edges = list(zip(ring[:-1], ring[1:]))
    for j in range(j_lo, j_hi):
        yc = j + 0.5
        crossings = []
        for (ax, ay), (bx, by) in edges:
            if ay == by:
                continue
            lo, hi = (ay, by) if ay < by else (by, ay)
            if lo <= yc < hi:
                t = (yc - ay) / (by - ay)
                crossings.append(ax + t * (bx - ax))
        crossings.sort()
        for k in range(0, len(crossings) - 1, 2):
            left, right = crossings[k], crossings[k + 1]
            i_start = max(0, int(math.ceil(left - 0.5)))
            i_end = min(width, int(math.ceil(right - 0.5)))
            if i_end > i_start:
                bits[j, i_start:i_end] = True
    return BitMask(width=width, height=height, bits=bits)


def mask_iou(a: BitMask, b: BitMask) -> float:
    """IoU of two same-sized bit masks; 0.0 when both are empty."""
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(f"mask sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}")
    inter = int(np.logical_and(a.bits, b.bits).sum())
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 0.0
    return inter / union


def _det_order(d: Detection) -> tuple:
    return (-d.score, d.box.x1, d.box.y1, d.box.x2, d.box.y2)


def filter_detections(
    detections: list[Detection],
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    max_instances: int = DEFAULT_MAX_INSTANCES,
) -> list[Detection]:
    """Drop low-confidence detections and cap the survivor count.

    Survivors come back sorted by descending score (ties broken by box
    coordinates); the cap keeps the top ``max_instances`` of that order.
    """
    if not 0.0 <= min_confidence <= 1.0:
        raise ValueError(f"min_confidence {min_confidence} outside [0, 1]")
    if max_instances < 0:
        raise ValueError("max_instances must be non-negative")
    kept = sorted((d for d in detections if d.score >= min_confidence), key=_det_order)
    return kept[:max_instances]


def nms(detections: list[Detection], iou_thresh: float = DEFAULT_NMS_IOU) -> list[Detection]:
    """Greedy non-maximum suppression by box IoU.

    Detections are visited in descending score order; each survivor
    suppresses later boxes overlapping it with IoU strictly above the
    threshold. Equal scores are ordered by box coordinates, so the result
    does not depend on input order.
    """
    if not 0.0 <= iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh {iou_thresh} outside [0, 1]")
    ordered = sorted(detections, key=_det_order)
    kept: list[Detection] = []
    for det in ordered:
        if all(box_iou(det.box, k.box) <= iou_thresh for k in kept):
            kept.append(det)
    return kept
