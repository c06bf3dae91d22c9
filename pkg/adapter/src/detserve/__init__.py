"""Inference adapter: serves Mask R-CNN detections over the tile wire protocol.

The pipeline on the other end of the wire sends one JSON request per tile
(stdio line or HTTP POST /infer) and owns all post-processing; this package
only decodes the tile, runs the model forward pass, converts instance masks
to polygon rings, and answers in the detection schema. A stub detector
replays canned detections from a fixture file so integration tests need no
model weights.
"""

from .config import AdapterConfig
from .protocol import PROTOCOL_VERSION, Detection, handle_request
from .stub import StubDetector, load_fixture

__all__ = [
    "AdapterConfig",
    "Detection",
    "ModelDetector",
    "PROTOCOL_VERSION",
    "StubDetector",
    "WeightsError",
    "handle_request",
    "load_fixture",
    "load_model",
    "mask_to_ring",
]

_MODEL_EXPORTS = ("ModelDetector", "WeightsError", "load_model", "mask_to_ring")


def __getattr__(name: str):
    # the model stack (torch, torchvision, cv2) loads only when asked for,
    # so stub-mode startup stays fast and weight-free
    if name in _MODEL_EXPORTS:
        from . import model

        return getattr(model, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
