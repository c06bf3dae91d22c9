"""Raster decode and tile cropping.

Only PNG and uncompressed TIFF are accepted. Orthomosaics arrive in many
containers, but supporting exactly the formats the pipeline itself emits
keeps decode behavior predictable; anything else should be converted
upstream.
"""

from __future__ import annotations

from pathlib import Path

from PIL import Image

from .tiler import TileIndex

_TIFF_COMPRESSION_TAG = 259
_TIFF_UNCOMPRESSED = 1


class RasterError(ValueError):
    """Raised for rasters the pipeline does not decode."""


def load_raster(path: str | Path) -> Image.Image:
    """Open a PNG or uncompressed TIFF and load it fully into memory."""
    path = Path(path)
    try:
        img = Image.open(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise RasterError(f"{path}: cannot decode raster: {exc}") from exc
    if img.format == "TIFF":
        compression = img.tag_v2.get(_TIFF_COMPRESSION_TAG, _TIFF_UNCOMPRESSED)
        if compression != _TIFF_UNCOMPRESSED:
            raise RasterError(f"{path}: only uncompressed TIFF is supported (compression tag {compression})")
    elif img.format != "PNG":
        raise RasterError(f"{path}: unsupported raster format {img.format}; use PNG or uncompressed TIFF")
    img.load()
    return img


def crop_tile(img: Image.Image, tile: TileIndex) -> Image.Image:
    """Crop one tile out of a loaded raster."""
    x, y = tile.origin.col, tile.origin.row
    if x < 0 or y < 0 or x + tile.width > img.width or y + tile.height > img.height:
        raise RasterError(
            f"tile {tile.tile_id} rect {tile.rect} exceeds raster {img.width}x{img.height}"
        )
    return img.crop((int(x), int(y), int(x + tile.width), int(y + tile.height)))
