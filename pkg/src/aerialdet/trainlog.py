"""Training configuration and loss-log analysis.

The model itself trains elsewhere; this module pins the hyperparameters the
rest of the pipeline assumes, round-trips them through a plain key=value
config file, and digests the per-epoch loss CSVs a training run leaves
behind.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

from .detpost import AnchorSpec

_RATE_FIELDS = ("learning_momentum", "learning_rate", "weight_decay")
_COUNT_FIELDS = (
    "batch_size",
    "detection_max_instances",
    "steps_per_epoch",
    "train_rois_per_image",
    "validation_steps",
    "epochs",
    "backbone_stride",
    "backbone_channels",
)


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the detector and its training schedule."""

    backbone: str = "resnet101"
    batch_size: int = 1
    detection_min_confidence: float = 0.9
    detection_max_instances: int = 100
    learning_momentum: float = 0.9
    learning_rate: float = 0.001
    steps_per_epoch: int = 100
    train_rois_per_image: int = 110
    validation_steps: int = 50
    weight_decay: float = 0.0001
    epochs: int = 50
    anchor: AnchorSpec = field(default_factory=AnchorSpec)
    backbone_stride: int = 32
    backbone_channels: int = 2048

    def __post_init__(self) -> None:
        if not self.backbone:
            raise ValueError("backbone must be non-empty")
        for name in _COUNT_FIELDS:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in _RATE_FIELDS:
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} {value} outside (0, 1]")
        if not 0.0 <= self.detection_min_confidence <= 1.0:
            raise ValueError(f"detection_min_confidence {self.detection_min_confidence} outside [0, 1]")


def default_config() -> ModelConfig:
    return ModelConfig()


def write_config(config: ModelConfig) -> str:
    """Serialize a config as sorted key=value lines."""
    items = {
        "backbone": config.backbone,
        "batch_size": config.batch_size,
        "detection_min_confidence": config.detection_min_confidence,
        "detection_max_instances": config.detection_max_instances,
        "learning_momentum": config.learning_momentum,
        "learning_rate": config.learning_rate,
        "steps_per_epoch": config.steps_per_epoch,
        "train_rois_per_image": config.train_rois_per_image,
        "validation_steps": config.validation_steps,
        "weight_decay": config.weight_decay,
        "epochs": config.epochs,
        "anchor_scales": ",".join(repr(s) for s in config.anchor.scales),
        "anchor_ratios": ",".join(repr(r) for r in config.anchor.ratios),
        "anchor_stride": config.anchor.stride,
        "backbone_stride": config.backbone_stride,
        "backbone_channels": config.backbone_channels,
    }
    return "".join(f"{key}={items[key]}\n" for key in sorted(items))


def read_config(text: str) -> ModelConfig:
    """Parse key=value config text; unknown keys are an error."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in raw:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        raw[key] = value.strip()

    config = default_config()
    anchor = config.anchor
    updates: dict[str, object] = {}
    for key, value in raw.items():
        try:
            if key == "backbone":
                updates[key] = value
            elif key in _COUNT_FIELDS:
                updates[key] = int(value)
            elif key in _RATE_FIELDS or key == "detection_min_confidence":
                updates[key] = float(value)
            elif key == "anchor_scales":
                anchor = replace(anchor, scales=tuple(float(v) for v in value.split(",")))
            elif key == "anchor_ratios":
                anchor = replace(anchor, ratios=tuple(float(v) for v in value.split(",")))
            elif key == "anchor_stride":
                anchor = replace(anchor, stride=int(value))
            else:
                raise ValueError(f"unknown config key {key!r}")
        except ValueError as exc:
            if "unknown config key" in str(exc):
                raise
            raise ValueError(f"config key {key!r}: bad value {value!r}") from exc
    return replace(config, anchor=anchor, **updates)


@dataclass(frozen=True)
class LossPoint:
    epoch: int
    train_loss: float
    val_loss: float
    map_score: float | None = None


@dataclass(frozen=True)
class LossSeries:
    label: str
    points: tuple[LossPoint, ...]

    def __post_init__(self) -> None:
        epochs = [p.epoch for p in self.points]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("epochs must be strictly increasing")
        for p in self.points:
            if p.train_loss < 0 or p.val_loss < 0:
                raise ValueError(f"epoch {p.epoch}: losses must be non-negative")

    def __len__(self) -> int:
        return len(self.points)


def parse_loss_log(text: str, label: str = "") -> LossSeries:
    """Parse a per-epoch loss CSV.

    Header must be ``epoch,train_loss,val_loss`` with an optional trailing
    ``map`` column; an empty map cell means the epoch was not evaluated.
    """
    rows = list(csv.reader(io.StringIO(text)))
    rows = [row for row in rows if row]
    if not rows:
        raise ValueError("empty loss log")
    header = [cell.strip() for cell in rows[0]]
    if header not in (["epoch", "train_loss", "val_loss"], ["epoch", "train_loss", "val_loss", "map"]):
        raise ValueError(f"unexpected loss log header: {rows[0]!r}")
    has_map = len(header) == 4
    points = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"loss log line {lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            epoch = int(row[0])
            train_loss = float(row[1])
            val_loss = float(row[2])
            map_score = None
            if has_map and row[3].strip():
                map_score = float(row[3])
        except ValueError as exc:
            raise ValueError(f"loss log line {lineno}: {exc}") from exc
        points.append(LossPoint(epoch=epoch, train_loss=train_loss, val_loss=val_loss, map_score=map_score))
    return LossSeries(label=label, points=tuple(points))


def select_best_epoch(series: LossSeries, criterion: str = "min_val_loss") -> tuple[int, float]:
    """Best (epoch, value) under a criterion; earliest epoch wins ties."""
    if not series.points:
        raise ValueError("empty loss series")
    if criterion == "min_val_loss":
        best = min(series.points, key=lambda p: (p.val_loss, p.epoch))
        return best.epoch, best.val_loss
    if criterion == "max_map":
        scored = [p for p in series.points if p.map_score is not None]
        if not scored:
            raise ValueError("no map values in series")
        best = max(scored, key=lambda p: (p.map_score, -p.epoch))
        return best.epoch, best.map_score
    raise ValueError(f"unknown criterion {criterion!r}")


@dataclass(frozen=True)
class SeriesStats:
    label: str
    final_train: float
    final_val: float
    min_train: float
    min_val: float
    min_val_epoch: int


@dataclass(frozen=True)
class BatchComparison:
    stats: tuple[SeriesStats, ...]
    ranking: tuple[str, ...]


def compare_batch_sizes(series: list[LossSeries]) -> BatchComparison:
    """Summarize several training runs and rank them by minimum val loss.

    Stats keep the input order; the ranking sorts labels by ascending
    minimum validation loss, ties broken by label.
    """
    if len(series) < 2:
        raise ValueError("need at least two series to compare")
    stats = []
    for s in series:
        if not s.points:
            raise ValueError(f"series {s.label!r} is empty")
        best = min(s.points, key=lambda p: (p.val_loss, p.epoch))
        stats.append(
            SeriesStats(
                label=s.label,
                final_train=s.points[-1].train_loss,
                final_val=s.points[-1].val_loss,
                min_train=min(p.train_loss for p in s.points),
                min_val=best.val_loss,
                min_val_epoch=best.epoch,
            )
        )
    ranking = tuple(st.label for st in sorted(stats, key=lambda st: (st.min_val, st.label)))
    return BatchComparison(stats=tuple(stats), ranking=ranking)
