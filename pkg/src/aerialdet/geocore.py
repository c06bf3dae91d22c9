"""Affine geotransform arithmetic between pixel and geographic coordinates.

The six-parameter transform follows the GDAL convention: the origin is the
geographic position of the *top-left corner* of pixel (0, 0), so integer tile
boundaries land on exact geographic positions. World files reference the
*center* of the top-left pixel instead; :func:`load_world_file` applies the
half-pixel shift on ingest.

Coordinates are treated as an abstract planar system. No CRS or datum
handling happens here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class NonInvertibleTransformError(ValueError):
    """Raised when a zero-determinant transform is asked for its inverse."""


class WorldFileError(ValueError):
    """Raised for malformed world-file text."""


@dataclass(frozen=True)
class GeoTransform:
    """Six-parameter affine map from pixel (col, row) to geographic (x, y).

    ``x = origin_x + col*pixel_w + row*rot_x``
    ``y = origin_y + col*rot_y + row*pixel_h``

    ``pixel_h`` is negative for north-up imagery. A transform with zero
    determinant is representable but cannot be inverted.
    """

    origin_x: float
    pixel_w: float
    rot_x: float
    origin_y: float
    rot_y: float
    pixel_h: float

    def __post_init__(self) -> None:
        for name in ("origin_x", "pixel_w", "rot_x", "origin_y", "rot_y", "pixel_h"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"GeoTransform.{name} must be finite, got {value!r}")

    @property
    def determinant(self) -> float:
        return self.pixel_w * self.pixel_h - self.rot_x * self.rot_y

    @property
    def is_invertible(self) -> bool:
        return self.determinant != 0.0

    @property
    def gsd(self) -> float:
        """Ground sample distance: geo-units covered per pixel."""
        return math.sqrt(abs(self.determinant))


@dataclass(frozen=True)
class PixelPoint:
    """Fractional pixel position (col, row)."""

    col: float
    row: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.col) and math.isfinite(self.row)):
            raise ValueError(f"PixelPoint must be finite, got ({self.col!r}, {self.row!r})")


@dataclass(frozen=True)
class GeoPoint:
    """Geographic position (x, y) in the raster's planar system."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"GeoPoint must be finite, got ({self.x!r}, {self.y!r})")


def pixel_to_geo(gt: GeoTransform, p: PixelPoint) -> GeoPoint:
    """Map a pixel position to geographic coordinates. Total function."""
    return GeoPoint(
        x=gt.origin_x + p.col * gt.pixel_w + p.row * gt.rot_x,
        y=gt.origin_y + p.col * gt.rot_y + p.row * gt.pixel_h,
    )


def geo_to_pixel(gt: GeoTransform, g: GeoPoint) -> PixelPoint:
    """Map geographic coordinates back to a (fractional) pixel position.

    Exact 2x2 affine inverse of :func:`pixel_to_geo`. Raises
    :class:`NonInvertibleTransformError` on a degenerate transform.
    """
    det = gt.determinant
    if det == 0.0:
        raise NonInvertibleTransformError(
            f"geotransform determinant is zero: {gt!r}"
        )
    dx = g.x - gt.origin_x
    dy = g.y - gt.origin_y
    col = (dx * gt.pixel_h - dy * gt.rot_x) / det
    row = (dy * gt.pixel_w - dx * gt.rot_y) / det
    return PixelPoint(col=col, row=row)


def load_world_file(text: str) -> GeoTransform:
    """Parse six-line world-file text into a corner-referenced transform.

    Line order: pixel_w, rot_y, rot_x, pixel_h, center_x, center_y. The last
    two lines give the center of the top-left pixel, so the returned origin
    shifts back by half a pixel. LF and CRLF both accepted.
    """
    lines = [line.strip() for line in text.splitlines()]
    while lines and lines[-1] == "":
        lines.pop()
    if len(lines) != 6:
        raise WorldFileError(f"world file needs exactly 6 lines, got {len(lines)}")
    values = []
    for i, line in enumerate(lines, start=1):
        try:
            values.append(float(line))
        except ValueError:
            raise WorldFileError(f"world file line {i} is not a number: {line!r}") from None
    pixel_w, rot_y, rot_x, pixel_h, center_x, center_y = values
    gt = GeoTransform(
        origin_x=center_x - 0.5 * pixel_w - 0.5 * rot_x,
        pixel_w=pixel_w,
        rot_x=rot_x,
        origin_y=center_y - 0.5 * rot_y - 0.5 * pixel_h,
        rot_y=rot_y,
        pixel_h=pixel_h,
    )
    if not gt.is_invertible:
        raise WorldFileError("world file describes a zero-determinant transform")
    return gt
