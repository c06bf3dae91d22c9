"""Rendering for evaluation output: tile overlays, line charts, PR curves.

Charts are emitted as self-contained SVG text so reports need no plotting
stack; overlays are drawn directly onto tile images.
"""

from __future__ import annotations

from typing import Sequence

from PIL import Image, ImageDraw

from .detpost import Detection
from .evalkit import PRCurve
from .trainlog import LossSeries
from .vector_io import Ring

GT_COLOR = "#00d000"
DET_COLOR = "#ff2020"

_SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_WIDTH = 640
_HEIGHT = 480
_MARGIN_LEFT = 64
_MARGIN_RIGHT = 16
_MARGIN_TOP = 40
_MARGIN_BOTTOM = 48


def draw_overlay(
    image: Image.Image,
    truths: Sequence[Ring],
    detections: Sequence[Detection],
    gt_color: str = GT_COLOR,
    det_color: str = DET_COLOR,
) -> Image.Image:
    """Ground truth outlines in one color, detection boxes plus scores in
    another; returns a new RGB image."""
    out = image.convert("RGB")
    draw = ImageDraw.Draw(out)
    for ring in truths:
        draw.line([(float(x), float(y)) for x, y in ring], fill=gt_color, width=2)
    for det in detections:
        box = det.box
        draw.rectangle((box.x1, box.y1, box.x2, box.y2), outline=det_color, width=2)
        if det.mask is not None:
            draw.line([(float(x), float(y)) for x, y in det.mask], fill=det_color, width=1)
        draw.text((box.x1 + 2, max(0.0, box.y1 - 12)), f"{det.score:.2f}", fill=det_color)
    return out


def _fmt(value: float) -> str:
    return f"{value:.4g}"


def line_chart_svg(
    series: Sequence[tuple[str, Sequence[tuple[float, float]]]],
    title: str,
    x_label: str,
    y_label: str,
) -> str:
    """Render labeled line series as a fixed-size SVG chart."""
    points = [p for _, pts in series for p in pts]
    if not points:
        raise ValueError("no data points to chart")
    x_min = min(p[0] for p in points)
    x_max = max(p[0] for p in points)
    y_min = min(p[1] for p in points)
    y_max = max(p[1] for p in points)
    if x_max == x_min:
        x_min, x_max = x_min - 0.5, x_max + 0.5
    if y_max == y_min:
        y_min, y_max = y_min - 0.5, y_max + 0.5

    plot_w = _WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = _HEIGHT - _MARGIN_TOP - _MARGIN_BOTTOM

    def sx(x: float) -> float:
        return _MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w

    def sy(y: float) -> float:
        return _MARGIN_TOP + plot_h - (y - y_min) / (y_max - y_min) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2:g}" y="24" text-anchor="middle" font-size="16">{title}</text>',
    ]
    axis_y = _MARGIN_TOP + plot_h
    parts.append(
        f'<line x1="{_MARGIN_LEFT}" y1="{axis_y}" x2="{_MARGIN_LEFT + plot_w}" y2="{axis_y}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{_MARGIN_LEFT}" y1="{_MARGIN_TOP}" x2="{_MARGIN_LEFT}" y2="{axis_y}" stroke="black"/>'
    )
    for k in range(5):
        frac = k / 4.0
        tx = x_min + frac * (x_max - x_min)
        ty = y_min + frac * (y_max - y_min)
        x_px = sx(tx)
        y_px = sy(ty)
        parts.append(f'<line x1="{x_px:g}" y1="{axis_y}" x2="{x_px:g}" y2="{axis_y + 4}" stroke="black"/>')
        parts.append(
            f'<text x="{x_px:g}" y="{axis_y + 18}" text-anchor="middle" font-size="11">{_fmt(tx)}</text>'
        )
        parts.append(f'<line x1="{_MARGIN_LEFT - 4}" y1="{y_px:g}" x2="{_MARGIN_LEFT}" y2="{y_px:g}" stroke="black"/>')
        parts.append(
            f'<text x="{_MARGIN_LEFT - 8}" y="{y_px + 4:g}" text-anchor="end" font-size="11">{_fmt(ty)}</text>'
        )
    parts.append(
        f'<text x="{_MARGIN_LEFT + plot_w / 2:g}" y="{_HEIGHT - 8}" text-anchor="middle" font-size="13">{x_label}</text>'
    )
    parts.append(
        f'<text x="16" y="{_MARGIN_TOP + plot_h / 2:g}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {_MARGIN_TOP + plot_h / 2:g})">{y_label}</text>'
    )
    for idx, (label, pts) in enumerate(series):
        if not pts:
            continue
        color = _SERIES_COLORS[idx % len(_SERIES_COLORS)]
        coords = " ".join(f"{sx(x):g},{sy(y):g}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        legend_y = _MARGIN_TOP + 8 + idx * 16
        legend_x = _MARGIN_LEFT + plot_w - 140
        parts.append(
            f'<line x1="{legend_x}" y1="{legend_y}" x2="{legend_x + 20}" y2="{legend_y}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{legend_x + 26}" y="{legend_y + 4}" font-size="12">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def pr_curve_svg(curve: PRCurve, title: str = "Precision-recall") -> str:
    points = [(p.recall, p.precision) for p in curve.points]
    return line_chart_svg([("precision", points)], title, "recall", "precision")


def pr_curve_csv(curve: PRCurve) -> str:
    lines = ["recall,precision,threshold"]
    for p in curve.points:
        lines.append(f"{p.recall:.6f},{p.precision:.6f},{p.threshold:.6f}")
    return "".join(line + "\n" for line in lines)


def loss_chart_svg(series: Sequence[LossSeries], title: str = "Training loss") -> str:
    """Train and validation loss per epoch for any number of runs."""
    charted: list[tuple[str, Sequence[tuple[float, float]]]] = []
    for s in series:
        prefix = f"{s.label} " if s.label else ""
        charted.append((f"{prefix}train", [(p.epoch, p.train_loss) for p in s.points]))
        charted.append((f"{prefix}val", [(p.epoch, p.val_loss) for p in s.points]))
    return line_chart_svg(charted, title, "epoch", "loss")
