"""Aerial-imagery tree detection pipeline.

Turns a georeferenced raster plus vector ground truth into annotated
tiles, post-processes raw detector output, and scores detections with
COCO-style metrics. Neural inference itself stays behind a line-based
wire protocol served by a separate adapter process.
"""

__version__ = "0.1.0"
