"""Raster tiling, annotation clipping, and the train/val/test split.

A large pixel-space raster is cut into a row-major grid of fixed-size tiles
(edge tiles truncated). Ground-truth polygons are clipped to each overlapping
tile with Sutherland-Hodgman and re-expressed in tile-local coordinates;
point features become small axis-aligned squares first. The split is a
seeded shuffle followed by a prefix partition, so it is reproducible.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .geocore import PixelPoint
from .vector_io import Feature, FeatureSet, PointGeom, PolygonGeom, Ring, signed_area

Rect = tuple[float, float, float, float]  # x0, y0, x1, y1

DEFAULT_TILE_SIZE = 1000
DEFAULT_MIN_AREA_FRAC = 0.25
DEFAULT_POINT_BOX_SIDE = 40.0


@dataclass(frozen=True)
class TileIndex:
    tile_id: str
    origin: PixelPoint
    width: int
    height: int
    row: int
    col: int

    @property
    def rect(self) -> Rect:
        return (
            self.origin.col,
            self.origin.row,
            self.origin.col + self.width,
            self.origin.row + self.height,
        )


@dataclass(frozen=True)
class TileAnnotation:
    """Ground-truth polygons for one tile, in tile-local pixel coordinates."""

    tile_id: str
    polygons: tuple[tuple[Ring, str], ...]  # (closed ring, label)


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int


def tile_id_for(row: int, col: int) -> str:
    return f"r{row:02d}_c{col:02d}"


def tile_grid(
    raster_w: int, raster_h: int, tile: int = DEFAULT_TILE_SIZE, overlap: int = 0
) -> list[TileIndex]:
    """Cover the raster with a row-major grid of tiles.

    With the default overlap of 0 the stride equals the tile size and the
    tiles partition the raster exactly; edge tiles shrink to fit.
    """
    if raster_w <= 0 or raster_h <= 0 or tile <= 0:
        raise ValueError("raster dimensions and tile size must be positive")
    stride = tile - overlap
    if stride <= 0:
        raise ValueError(f"overlap {overlap} leaves no stride for tile size {tile}")
    tiles = []
    for row, y in enumerate(range(0, raster_h, stride)):
        for col, x in enumerate(range(0, raster_w, stride)):
            tiles.append(
                TileIndex(
                    tile_id=tile_id_for(row, col),
                    origin=PixelPoint(col=float(x), row=float(y)),
                    width=min(tile, raster_w - x),
                    height=min(tile, raster_h - y),
                    row=row,
                    col=col,
                )
            )
    return tiles


def _clip_half_plane(points, inside, intersect):
    if not points:
        return []
    out = []
    prev = points[-1]
    prev_in = inside(prev)
    for cur in points:
        cur_in = inside(cur)
        if cur_in:
            if not prev_in:
                out.append(intersect(prev, cur))
            out.append(cur)
        elif prev_in:
            out.append(intersect(prev, cur))
        prev, prev_in = cur, cur_in
    return out


def clip_polygon(ring: Ring, rect: Rect) -> list[Ring]:
    """Clip a closed ring against an axis-aligned rectangle.

    Sutherland-Hodgman against the four half-planes. Returns [] when the
    intersection has zero area, otherwise a single closed ring whose area
    equals area(ring intersect rect).
    """
    x0, y0, x1, y1 = rect
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate clip rectangle {rect!r}")
    points = list(ring)
    if len(points) >= 2 and points[0] == points[-1]:
        points = points[:-1]
    if len(points) < 3:
        return []

    def at_x(c):
        def cross(a, b):
            t = (c - a[0]) / (b[0] - a[0])
            return (c, a[1] + t * (b[1] - a[1]))

        return cross

    def at_y(c):
        def cross(a, b):
            t = (c - a[1]) / (b[1] - a[1])
            return (a[0] + t * (b[0] - a[0]), c)

        return cross

    points = _clip_half_plane(points, lambda p: p[0] >= x0, at_x(x0))
    points = _clip_half_plane(points, lambda p: p[0] <= x1, at_x(x1))
    points = _clip_half_plane(points, lambda p: p[1] >= y0, at_y(y0))
    points = _clip_half_plane(points, lambda p: p[1] <= y1, at_y(y1))
    if len(points) < 3:
        return []
    closed = tuple(points) + (points[0],)
    if signed_area(closed) == 0.0:
        return []
    return [closed]


def ring_area(ring: Ring) -> float:
    return abs(signed_area(ring))


def _point_box(x: float, y: float, side: float) -> Ring:
    h = side / 2.0
    return (
        (x - h, y - h),
        (x + h, y - h),
        (x + h, y + h),
        (x - h, y + h),
        (x - h, y - h),
    )


def _feature_rings(feature: Feature, point_box_side: float) -> list[Ring]:
    # Holes are not subtracted: every ring is treated as an independent solid
    # polygon, which matches the flat ring model of TileAnnotation.
    if isinstance(feature.geometry, PointGeom):
        return [_point_box(feature.geometry.x, feature.geometry.y, point_box_side)]
    assert isinstance(feature.geometry, PolygonGeom)
    return list(feature.geometry.rings)


def _feature_label(feature: Feature, label_key: str | None, default_label: str) -> str:
    if label_key is not None:
        for key, value in feature.tags:
            if key == label_key:
                return value
    return default_label


def assign_annotations(
    features: FeatureSet,
    grid: list[TileIndex],
    min_area_frac: float = DEFAULT_MIN_AREA_FRAC,
    point_box_side: float = DEFAULT_POINT_BOX_SIDE,
    label_key: str | None = None,
    default_label: str = "coconut",
) -> list[TileAnnotation]:
    """Clip every feature into every overlapping tile.

    Clipped pieces smaller than ``min_area_frac`` of the original ring area
    are dropped. Points are expanded to squares of ``point_box_side`` pixels
    before clipping. Only tiles that end up with at least one polygon appear
    in the result, in row-major grid order.
    """
    if not 0.0 <= min_area_frac <= 1.0:
        raise ValueError(f"min_area_frac must be in [0, 1], got {min_area_frac}")
    per_tile: dict[str, list[tuple[Ring, str]]] = {}
    for feature in features:
        label = _feature_label(feature, label_key, default_label)
        for ring in _feature_rings(feature, point_box_side):
            original_area = ring_area(ring)
            if original_area == 0.0:
                continue
            xs = [p[0] for p in ring]
            ys = [p[1] for p in ring]
            ring_bbox = (min(xs), min(ys), max(xs), max(ys))
            for tile in grid:
                tx0, ty0, tx1, ty1 = tile.rect
                if (
                    ring_bbox[2] <= tx0
                    or ring_bbox[0] >= tx1
                    or ring_bbox[3] <= ty0
                    or ring_bbox[1] >= ty1
                ):
                    continue
                for piece in clip_polygon(ring, tile.rect):
                    if ring_area(piece) < min_area_frac * original_area:
                        continue
                    local = tuple((x - tx0, y - ty0) for x, y in piece)
                    per_tile.setdefault(tile.tile_id, []).append((local, label))
    return [
        TileAnnotation(tile_id=t.tile_id, polygons=tuple(per_tile[t.tile_id]))
        for t in grid
        if t.tile_id in per_tile
    ]


def split_dataset(
    tile_ids: list[str], ratios: tuple[float, float, float], seed: int
) -> Split:
    """Partition tile ids into train/val/test.

    ``ratios`` is either three positive fractions summing to 1 (sizes follow
    largest-remainder rounding) or three absolute counts summing to the
    number of tiles. The same seed over the same input always produces the
    same split.
    """
    ids = list(tile_ids)
    n = len(ids)
    if len(set(ids)) != n:
        raise ValueError("tile_ids contains duplicates")
    counts = _resolve_counts(ratios, n)
    rng = random.Random(seed)
    rng.shuffle(ids)
    train = tuple(ids[: counts[0]])
    val = tuple(ids[counts[0] : counts[0] + counts[1]])
    test = tuple(ids[counts[0] + counts[1] :])
    return Split(train=train, val=val, test=test, seed=seed)


def _resolve_counts(ratios: tuple[float, float, float], n: int) -> tuple[int, int, int]:
    if len(ratios) != 3:
        raise ValueError(f"need exactly 3 ratios or counts, got {len(ratios)}")
    values = [float(v) for v in ratios]
    integral = all(v >= 0 and v.is_integer() for v in values)
    if integral and (sum(values) != 1.0 or n == 1):
        counts = [int(v) for v in values]
        total = sum(counts)
        if total > n:
            raise ValueError(f"counts {counts} exceed the {n} available tiles")
        if total != n:
            raise ValueError(f"counts {counts} must sum to the {n} available tiles")
        return counts[0], counts[1], counts[2]
    if abs(sum(values) - 1.0) > 1e-9:
        raise ValueError(f"ratios {values} must sum to 1 (or be counts summing to {n})")
    if any(v <= 0 for v in values):
        raise ValueError(f"ratios must be positive, got {values}")
    quotas = [v * n for v in values]
    base = [math.floor(q) for q in quotas]
    leftover = n - sum(base)
    order = sorted(range(3), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base[0], base[1], base[2]
