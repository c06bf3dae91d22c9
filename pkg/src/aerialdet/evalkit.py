"""Detection evaluation: greedy matching, precision/recall/F1, AP and mAP.

Matching is COCO-style greedy: detections are visited in descending score
order and each one claims the highest-IoU unmatched ground truth at or above
the threshold. Ties in score are broken by box coordinates so results do not
depend on input order. Matching is label-blind; label agreement is reported
separately as classification accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Mapping, Sequence

from .detpost import Box, Detection, box_iou, mask_iou, rasterize_polygon
from .tiler import TileAnnotation
from .vector_io import Ring

DEFAULT_IOU_THRESH = 0.5
COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

MatchMode = Literal["box", "mask"]


class MaskModeError(ValueError):
    """Raised when mask-mode evaluation meets a detection or truth with no mask."""


@dataclass(frozen=True)
class GroundTruth:
    box: Box
    label: str = "coconut"
    mask: Ring | None = None


@dataclass(frozen=True)
class MatchPair:
    tile_id: str
    det_index: int
    gt_index: int
    iou: float
    labels_match: bool


@dataclass(frozen=True)
class TileCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: tuple[MatchPair, ...]
    per_tile: Mapping[str, TileCounts]


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    ca: float


@dataclass(frozen=True)
class PRPoint:
    recall: float
    precision: float
    threshold: float


@dataclass(frozen=True)
class PRCurve:
    points: tuple[PRPoint, ...]


def truths_from_annotations(tiles: Sequence[TileAnnotation]) -> dict[str, list[GroundTruth]]:
    """Turn tile annotations into ground truth keyed by tile: each polygon
    contributes its bounding box for box matching and its ring for mask
    matching."""
    truths: dict[str, list[GroundTruth]] = {}
    for tile in tiles:
        entries = []
        for ring, label in tile.polygons:
            x1, y1, x2, y2 = _ring_bbox(ring)
            entries.append(GroundTruth(box=Box(x1, y1, x2, y2), label=label, mask=ring))
        truths[tile.tile_id] = entries
    return truths


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0.0 when both are 0."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _ring_bbox(ring: Ring) -> tuple[float, float, float, float]:
    xs = [p[0] for p in ring]
    ys = [p[1] for p in ring]
    return min(xs), min(ys), max(xs), max(ys)


def _translate(ring: Ring, dx: float, dy: float) -> Ring:
    return tuple((x + dx, y + dy) for x, y in ring)


def ring_iou(a: Ring, b: Ring) -> float:
    """IoU of two polygon rings via rasterization over their joint bbox."""
    ax1, ay1, ax2, ay2 = _ring_bbox(a)
    bx1, by1, bx2, by2 = _ring_bbox(b)
    ox = math.floor(min(ax1, bx1))
    oy = math.floor(min(ay1, by1))
    w = max(1, int(math.ceil(max(ax2, bx2))) - ox)
    h = max(1, int(math.ceil(max(ay2, by2))) - oy)
    mask_a = rasterize_polygon(_translate(a, -ox, -oy), w, h)
    mask_b = rasterize_polygon(_translate(b, -ox, -oy), w, h)
    return mask_iou(mask_a, mask_b)


def _pair_iou(det: Detection, gt: GroundTruth, mode: MatchMode) -> float:
    if mode == "box":
        return box_iou(det.box, gt.box)
    if det.mask is None:
        raise MaskModeError("mask-mode evaluation requires a mask on every detection")
    if gt.mask is None:
        raise MaskModeError("mask-mode evaluation requires a mask on every ground truth")
    return ring_iou(det.mask, gt.mask)


def _det_rank(item: tuple[int, Detection]) -> tuple:
    i, d = item
    return (-d.score, d.box.x1, d.box.y1, d.box.x2, d.box.y2, i)


def match_detections(
    detections: Mapping[str, Sequence[Detection]],
    truths: Mapping[str, Sequence[GroundTruth]],
    iou_thresh: float = DEFAULT_IOU_THRESH,
    mode: MatchMode = "box",
) -> MatchResult:
    """Match detections to ground truth tile by tile.

    Tiles present on only one side still contribute: truth-only tiles are
    all FN, detection-only tiles all FP.
    """
    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh {iou_thresh} outside (0, 1]")
    pairs: list[MatchPair] = []
    per_tile: dict[str, TileCounts] = {}
    tp = fp = fn = 0
    for tile_id in sorted(set(detections) | set(truths)):
        dets = list(detections.get(tile_id, ()))
        gts = list(truths.get(tile_id, ()))
        unmatched = set(range(len(gts)))
        tile_tp = tile_fp = 0
        for det_index, det in sorted(enumerate(dets), key=_det_rank):
            best_iou = 0.0
            best_gt = -1
            for gt_index in sorted(unmatched):
                iou = _pair_iou(det, gts[gt_index], mode)
                if iou >= iou_thresh and iou > best_iou:
                    best_iou = iou
                    best_gt = gt_index
            if best_gt >= 0:
                unmatched.discard(best_gt)
                pairs.append(
                    MatchPair(
                        tile_id=tile_id,
                        det_index=det_index,
                        gt_index=best_gt,
                        iou=best_iou,
                        labels_match=det.label == gts[best_gt].label,
                    )
                )
                tile_tp += 1
            else:
                tile_fp += 1
        tile_fn = len(unmatched)
        per_tile[tile_id] = TileCounts(tp=tile_tp, fp=tile_fp, fn=tile_fn)
        tp += tile_tp
        fp += tile_fp
        fn += tile_fn
    return MatchResult(tp=tp, fp=fp, fn=fn, pairs=tuple(pairs), per_tile=per_tile)


def precision_recall_f1(result: MatchResult) -> Metrics:
    """Aggregate metrics from a match result; empty denominators give 0.0."""
    precision = result.tp / (result.tp + result.fp) if result.tp + result.fp else 0.0
    recall = result.tp / (result.tp + result.fn) if result.tp + result.fn else 0.0
    agree = sum(1 for p in result.pairs if p.labels_match)
    ca = agree / len(result.pairs) if result.pairs else 0.0
    return Metrics(precision=precision, recall=recall, f1=f1_score(precision, recall), ca=ca)


def classification_accuracy(
    result: MatchResult,
    detections: Mapping[str, Sequence[Detection]] | None = None,
    truths: Mapping[str, Sequence[GroundTruth]] | None = None,
) -> float:
    """Fraction of matched pairs whose labels agree; 0.0 with no matches.

    Pairs already record label agreement; passing the original detections
    and truths recomputes it from scratch instead, which the property suite
    uses as a cross-check.
    """
    if not result.pairs:
        return 0.0
    if detections is None or truths is None:
        agree = sum(1 for p in result.pairs if p.labels_match)
    else:
        agree = sum(
            1
            for p in result.pairs
            if detections[p.tile_id][p.det_index].label == truths[p.tile_id][p.gt_index].label
        )
    return agree / len(result.pairs)


def average_precision(
    detections: Mapping[str, Sequence[Detection]],
    truths: Mapping[str, Sequence[GroundTruth]],
    iou_thresh: float = DEFAULT_IOU_THRESH,
    interpolation: Literal["continuous", "101point"] = "continuous",
    mode: MatchMode = "box",
) -> tuple[float, PRCurve]:
    """Average precision over the full ranked detection list.

    Detections across all tiles are ranked globally by descending score and
    matched greedily within their own tile. Continuous interpolation
    integrates the precision envelope over recall; 101point averages the
    envelope at recalls 0.00, 0.01, ..., 1.00. With no detections or no
    ground truth the AP is 0.0 by convention.
    """
    total_gt = sum(len(v) for v in truths.values())
    ranked = []
    for tile_id, dets in detections.items():
        for det in dets:
            ranked.append((tile_id, det))
    ranked.sort(key=lambda td: (-td[1].score, td[0], td[1].box.x1, td[1].box.y1, td[1].box.x2, td[1].box.y2))

    unmatched = {tile_id: set(range(len(gts))) for tile_id, gts in truths.items()}
    points: list[PRPoint] = []
    tp = 0
    for rank, (tile_id, det) in enumerate(ranked):
        gts = truths.get(tile_id, ())
        pool = unmatched.get(tile_id, set())
        best_iou = 0.0
        best_gt = -1
        for gt_index in sorted(pool):
            iou = _pair_iou(det, gts[gt_index], mode)
            if iou >= iou_thresh and iou > best_iou:
                best_iou = iou
                best_gt = gt_index
        if best_gt >= 0:
            pool.discard(best_gt)
            tp += 1
        precision = tp / (rank + 1)
        recall = tp / total_gt if total_gt else 0.0
        points.append(PRPoint(recall=recall, precision=precision, threshold=det.score))

    curve = PRCurve(points=tuple(points))
    if not points or total_gt == 0:
        return 0.0, curve

    envelope = [0.0] * len(points)
    best = 0.0
    for i in range(len(points) - 1, -1, -1):
        best = max(best, points[i].precision)
        envelope[i] = best

    if interpolation == "continuous":
        ap = 0.0
        prev_recall = 0.0
        for i, point in enumerate(points):
            if point.recall > prev_recall:
                ap += (point.recall - prev_recall) * envelope[i]
                prev_recall = point.recall
        return ap, curve

    if interpolation == "101point":
        total = 0.0
        for k in range(101):
            r = k / 100.0
            value = 0.0
            for i, point in enumerate(points):
                if point.recall >= r - 1e-12:
                    value = envelope[i]
                    break
            total += value
        return total / 101.0, curve

    raise ValueError(f"unknown interpolation {interpolation!r}")


def mean_average_precision(
    detections: Mapping[str, Sequence[Detection]],
    truths: Mapping[str, Sequence[GroundTruth]],
    mode: Literal["at50", "coco"] = "at50",
    match_mode: MatchMode = "box",
) -> float:
    """mAP over IoU thresholds: at50 is AP at 0.5 with continuous
    interpolation; coco averages 101-point AP over 0.50:0.05:0.95."""
    if mode == "at50":
        ap, _ = average_precision(detections, truths, 0.5, "continuous", match_mode)
        return ap
    if mode == "coco":
        aps = []
        for thresh in COCO_IOU_THRESHOLDS:
            ap, _ = average_precision(detections, truths, thresh, "101point", match_mode)
            aps.append(ap)
        return sum(aps) / len(aps)
    raise ValueError(f"unknown mAP mode {mode!r}")
