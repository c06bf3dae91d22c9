"""Mask R-CNN wrapper: load weights, run the forward pass, emit detections.

The model is built with its head score threshold at zero and head
suppression disabled, so the raw ranked output crosses the wire and the
pipeline's own post-processing stays authoritative. Instance masks come
back as full-image probability maps; each is binarized and reduced to its
largest connected contour, emitted as one closed polygon ring.
"""

from __future__ import annotations

import io
import urllib.error
from typing import Sequence

import cv2
import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torchvision.models.detection import MaskRCNN, maskrcnn_resnet50_fpn
from torchvision.models.detection.backbone_utils import resnet_fpn_backbone

from .config import AdapterConfig
from .protocol import Detection, ImageError, Ring


class WeightsError(RuntimeError):
    """Raised when model weights cannot be obtained or do not fit."""


def _head_kwargs(raw_cap: int) -> dict:
    # score_thresh 0 and nms_thresh 1 leave filtering and suppression to
    # the wire peer; raw_cap bounds how many ranked instances survive the
    # head, so it must cover the largest max_instances a request will ask.
    return {
        "box_score_thresh": 0.0,
        "box_nms_thresh": 1.0,
        "box_detections_per_img": raw_cap,
    }


def load_model(config: AdapterConfig, raw_cap: int = 100, **model_kwargs) -> torch.nn.Module:
    """Build the configured backbone variant and load its weights.

    With a ``weights`` path the state dict is loaded from disk (a
    fine-tuned checkpoint); without one the resnet50 variant uses the
    published COCO checkpoint and resnet101 is refused, since no published
    checkpoint exists for it. Extra keyword arguments reach the model
    constructor (``min_size``, ``num_classes``, ...).
    """
    kwargs = {**_head_kwargs(raw_cap), **model_kwargs}
    if config.backbone == "resnet50":
        if config.weights is None:
            from torchvision.models.detection import MaskRCNN_ResNet50_FPN_Weights

            try:
                model = maskrcnn_resnet50_fpn(
                    weights=MaskRCNN_ResNet50_FPN_Weights.COCO_V1, **kwargs
                )
            except (urllib.error.URLError, OSError, RuntimeError) as exc:
                raise WeightsError(f"cannot obtain the COCO checkpoint: {exc}") from exc
        else:
            model = maskrcnn_resnet50_fpn(weights=None, weights_backbone=None, **kwargs)
            _load_state(model, config)
    else:
        if config.weights is None:
            raise WeightsError(
                "no published checkpoint for the resnet101 variant; provide a weights file"
            )
        backbone = resnet_fpn_backbone(backbone_name="resnet101", weights=None)
        model = MaskRCNN(backbone, num_classes=kwargs.pop("num_classes", 91), **kwargs)
        _load_state(model, config)
    model.to(config.device)
    model.eval()
    return model


def _load_state(model: torch.nn.Module, config: AdapterConfig) -> None:
    try:
        state = torch.load(config.weights, map_location=config.device, weights_only=True)
    except FileNotFoundError as exc:
        raise WeightsError(f"weights file not found: {config.weights}") from exc
    except Exception as exc:
        raise WeightsError(f"cannot read weights {config.weights}: {exc}") from exc
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise WeightsError(f"weights {config.weights} do not fit the model: {exc}") from exc


def mask_to_ring(mask: np.ndarray, threshold: float = 0.5) -> Ring | None:
    """Reduce a probability mask to its largest contour as a closed ring.

    Returns None when nothing crosses the threshold or the best contour is
    too thin to enclose any area.
    """
    binary = np.ascontiguousarray((mask >= threshold).astype(np.uint8))
    contours, _ = cv2.findContours(binary, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE)
    if not contours:
        return None
    largest = max(contours, key=cv2.contourArea)
    if cv2.contourArea(largest) <= 0.0:
        return None
    points = [(float(x), float(y)) for x, y in largest.reshape(-1, 2)]
    points.append(points[0])
    return tuple(points)


def _decode_rgb(png_bytes: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(png_bytes)) as image:
            return np.asarray(image.convert("RGB"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageError(str(exc)) from exc


class ModelDetector:
    """Runs the model on request images and shapes its raw output."""

    def __init__(
        self,
        model: torch.nn.Module,
        device: str = "cpu",
        labels: Sequence[str] | None = None,
    ):
        self._model = model
        self._device = device
        self._labels = tuple(labels) if labels is not None else None

    def _label_name(self, class_id: int) -> str:
        if self._labels is not None and 1 <= class_id <= len(self._labels):
            return self._labels[class_id - 1]
        return f"class{class_id}"

    def detect(
        self, tile_id: str, png_bytes: bytes, min_confidence: float, max_instances: int
    ) -> list[Detection]:
        pixels = _decode_rgb(png_bytes)
        height, width = pixels.shape[:2]
        tensor = torch.from_numpy(pixels.copy()).permute(2, 0, 1).float() / 255.0
        with torch.inference_mode():
            output = self._model([tensor.to(self._device)])[0]
        boxes = output["boxes"].cpu().numpy()
        scores = output["scores"].cpu().numpy()
        class_ids = output["labels"].cpu().numpy()
        masks = output.get("masks")
        detections = []
        for index in range(len(scores)):
            x1 = min(max(0.0, float(boxes[index, 0])), float(width))
            y1 = min(max(0.0, float(boxes[index, 1])), float(height))
            x2 = min(max(0.0, float(boxes[index, 2])), float(width))
            y2 = min(max(0.0, float(boxes[index, 3])), float(height))
            if x2 <= x1 or y2 <= y1:
                continue
            ring = None
            if masks is not None:
                ring = mask_to_ring(masks[index, 0].cpu().numpy())
            detections.append(
                Detection(
                    bbox=(x1, y1, x2, y2),
                    score=min(max(0.0, float(scores[index])), 1.0),
                    label=self._label_name(int(class_ids[index])),
                    ring=ring,
                )
            )
        return detections
