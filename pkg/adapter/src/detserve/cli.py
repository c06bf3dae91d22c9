"""Command line entry point for the adapter."""

from __future__ import annotations

import argparse
import sys

from .config import AdapterConfig
from .server import serve
from .stub import FixtureError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detserve",
        description="Serve Mask R-CNN detections over the tile wire protocol.",
    )
    parser.add_argument("--weights", help="path to a saved model state dict")
    parser.add_argument(
        "--backbone",
        default="resnet50",
        help="backbone variant: resnet50 or resnet101 (default resnet50)",
    )
    parser.add_argument("--device", default="cpu", help="torch device tag (default cpu)")
    parser.add_argument(
        "--transport",
        default="stdio",
        help="stdio (one JSON object per line) or http (POST /infer)",
    )
    parser.add_argument("--host", default="127.0.0.1", help="http bind address")
    parser.add_argument("--port", type=int, default=8300, help="http port (default 8300)")
    parser.add_argument(
        "--labels",
        help="comma-separated names for the model's 1-based class ids",
    )
    parser.add_argument(
        "--raw-cap",
        type=int,
        default=100,
        help="ranked instances kept per image before the request cap (default 100)",
    )
    parser.add_argument(
        "--stub",
        action="store_true",
        help="answer from a canned fixture instead of a model",
    )
    parser.add_argument("--stub-fixture", help="detection file backing stub mode")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    labels = None
    if args.labels:
        labels = tuple(name.strip() for name in args.labels.split(",") if name.strip())
    try:
        config = AdapterConfig(
            weights=args.weights,
            backbone=args.backbone,
            device=args.device,
            transport=args.transport,
            host=args.host,
            port=args.port,
            labels=labels,
            stub=args.stub,
            stub_fixture=args.stub_fixture,
        )
        if args.raw_cap < 1:
            raise ValueError(f"raw-cap must be positive, got {args.raw_cap}")
        return serve(config, raw_cap=args.raw_cap)
    # FixtureError is a ValueError; WeightsError is a RuntimeError
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
