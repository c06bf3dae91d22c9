"""Adapter configuration: model choice, device, and transport binding."""

from __future__ import annotations

from dataclasses import dataclass

BACKBONES = ("resnet50", "resnet101")
TRANSPORTS = ("stdio", "http")


@dataclass(frozen=True)
class AdapterConfig:
    """Everything needed to build the detector and bind its endpoint.

    ``weights`` is a path to a saved model state dict (a fine-tuned
    checkpoint); when omitted the resnet50 variant falls back to the
    published COCO checkpoint, which the resnet101 variant does not have.
    ``labels`` maps the model's 1-based class ids to names for the wire
    schema; ids outside the tuple are reported as ``class<N>``. Stub mode
    needs no weights at all and answers from ``stub_fixture``.
    """

    weights: str | None = None
    backbone: str = "resnet50"
    device: str = "cpu"
    transport: str = "stdio"
    host: str = "127.0.0.1"
    port: int = 8300
    labels: tuple[str, ...] | None = None
    stub: bool = False
    stub_fixture: str | None = None

    def __post_init__(self) -> None:
        if self.backbone not in BACKBONES:
            raise ValueError(
                f"backbone must be one of {', '.join(BACKBONES)}, got {self.backbone!r}"
            )
        if self.transport not in TRANSPORTS:
            raise ValueError(
                f"transport must be one of {', '.join(TRANSPORTS)}, got {self.transport!r}"
            )
        if not isinstance(self.port, int) or not 1 <= self.port <= 65535:
            raise ValueError(f"port must be in 1..65535, got {self.port!r}")
        if self.labels is not None and not all(
            isinstance(name, str) and name for name in self.labels
        ):
            raise ValueError("labels must be non-empty strings")
