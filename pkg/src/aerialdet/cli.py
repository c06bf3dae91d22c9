"""Command-line front end for the detection pipeline.

Subcommands cover the pipeline end to end: ``ingest`` turns surveyed
vectors into pixel-space features, ``tile`` cuts the orthomosaic and
annotations into training tiles, ``infer`` drives an external model adapter
over the wire protocol, ``postprocess`` applies the confidence filter and
NMS, ``evaluate`` scores detections against ground truth, and ``report``
renders overlays and charts from an evaluation report.

Exit codes: 0 on success, 1 when a run completed but some tiles failed,
2 on input or protocol errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import annot, detfile, detpost, evalkit, raster, report, tiler, trainlog, vector_io, wire
from .geocore import load_world_file

_PROG = "aerialdet"


def _read_text(path: str | Path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _load_model_config(path: str | None) -> trainlog.ModelConfig:
    if path is None:
        return trainlog.default_config()
    return trainlog.read_config(_read_text(path))


def _parse_filter(spec: str) -> tuple[str, str]:
    if "=" not in spec:
        raise ValueError(f"filter must be KEY=VALUE, got {spec!r}")
    key, _, value = spec.partition("=")
    return key, value


def cmd_ingest(args: argparse.Namespace) -> int:
    transform = load_world_file(_read_text(args.world))
    path = Path(args.vector)
    if path.suffix.lower() == ".shp":
        dbf_path = path.with_suffix(".dbf")
        dbf = dbf_path.read_bytes() if dbf_path.exists() else None
        features = vector_io.parse_shapefile(path.read_bytes(), dbf)
    else:
        features = vector_io.parse_geojson(_read_text(path))
    print(f"parsed {len(features)} features" + (f", skipped {features.skipped}" if features.skipped else ""))

    if args.filter:
        key, value = _parse_filter(args.filter)
        features = vector_io.filter_by_tag(features, key, value)
        if len(features) == 0:
            _warn(f"filter {args.filter!r} matched no features")
        print(f"kept {len(features)} features after filter")

    projected = vector_io.project_features(features, transform)
    Path(args.output).write_text(vector_io.emit_geojson(projected), encoding="utf-8")
    print(f"wrote {len(projected)} pixel-space features to {args.output} (gsd {transform.gsd:.4f})")
    return 0


def _ordered_annotations(
    grid: list[tiler.TileIndex], annotated: list[tiler.TileAnnotation], keep_empty: bool
) -> list[tiler.TileAnnotation]:
    if not keep_empty:
        return annotated
    by_id = {t.tile_id: t for t in annotated}
    return [
        by_id.get(tile.tile_id, tiler.TileAnnotation(tile_id=tile.tile_id, polygons=()))
        for tile in grid
    ]


def cmd_tile(args: argparse.Namespace) -> int:
    img = raster.load_raster(args.raster)
    features = vector_io.parse_geojson(_read_text(args.features))
    grid = tiler.tile_grid(img.width, img.height, args.tile_size, args.overlap)
    annotated = tiler.assign_annotations(
        features,
        grid,
        min_area_frac=args.min_area_frac,
        point_box_side=args.point_box_side,
        label_key=args.label_key,
        default_label=args.default_label,
    )
    ordered = _ordered_annotations(grid, annotated, args.keep_empty)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = {t.tile_id for t in ordered}
    to_write = [tile for tile in grid if tile.tile_id in wanted]

    def write_tile(tile: tiler.TileIndex) -> tuple[str, str, int]:
        crop = raster.crop_tile(img, tile)
        filename = f"{tile.tile_id}.png"
        target = out_dir / filename
        crop.save(target, format="PNG")
        return tile.tile_id, filename, target.stat().st_size

    filenames: dict[str, str] = {}
    filesizes: dict[str, int] = {}
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        for tile_id, filename, size in pool.map(write_tile, to_write):
            filenames[tile_id] = filename
            filesizes[tile_id] = size

    via_text = annot.emit_via(ordered, filenames, filesizes, label_key=args.label_key or "label")
    (out_dir / "via_annotations.json").write_text(via_text, encoding="utf-8")

    for finding in annot.lint_annotations(ordered):
        _warn(f"{finding.tile_id} polygon {finding.polygon_index}: {finding.reason}")

    if args.split:
        ratios = tuple(float(v) for v in args.split.split(","))
        split = tiler.split_dataset([t.tile_id for t in ordered], ratios, seed=args.seed)
        split_doc = {
            "train": list(split.train),
            "val": list(split.val),
            "test": list(split.test),
            "seed": split.seed,
        }
        (out_dir / "splits.json").write_text(json.dumps(split_doc, indent=2), encoding="utf-8")

    n_polygons = sum(len(t.polygons) for t in ordered)
    print(f"wrote {len(to_write)} tiles ({len(annotated)} annotated, {n_polygons} polygons) to {out_dir}")
    return 0


def cmd_postprocess(args: argparse.Namespace) -> int:
    config = _load_model_config(args.config)
    min_confidence = config.detection_min_confidence if args.min_confidence is None else args.min_confidence
    max_instances = config.detection_max_instances if args.max_instances is None else args.max_instances

    tiles = detfile.read_detections(_read_text(args.detections))
    before = sum(len(t.detections) for t in tiles)
    out = []
    for tile in tiles:
        if tile.failed:
            out.append(tile)
            continue
        kept = detpost.filter_detections(list(tile.detections), min_confidence, max_instances)
        kept = detpost.nms(kept, args.nms_iou)
        out.append(
            detfile.TileDetections(
                tile_id=tile.tile_id, detections=tuple(kept), seconds=tile.seconds
            )
        )
    Path(args.output).write_text(detfile.write_detections(out), encoding="utf-8")
    after = sum(len(t.detections) for t in out)
    print(f"kept {after} of {before} detections (min_confidence {min_confidence}, nms_iou {args.nms_iou})")
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    config = _load_model_config(args.config)
    min_confidence = config.detection_min_confidence if args.min_confidence is None else args.min_confidence
    max_instances = config.detection_max_instances if args.max_instances is None else args.max_instances

    tiles_dir = Path(args.tiles)
    if not tiles_dir.is_dir():
        raise ValueError(f"tile directory {tiles_dir} does not exist")
    paths = sorted(tiles_dir.glob("*.png"))
    if not paths:
        Path(args.output).write_text("", encoding="utf-8")
        print("no tiles to infer")
        return 0

    if args.adapter_cmd:
        client = wire.StdioAdapterClient(args.adapter_cmd, timeout=args.timeout)
    else:
        client = wire.HttpAdapterClient(args.adapter_url, timeout=args.timeout)

    results: list[detfile.TileDetections | None] = [None] * len(paths)
    aborted: str | None = None

    def run_one(path: Path) -> detfile.TileDetections:
        tile_id = path.stem
        start = time.perf_counter()
        detections = client.infer(tile_id, path.read_bytes(), min_confidence, max_instances)
        elapsed = time.perf_counter() - start
        return detfile.TileDetections(
            tile_id=tile_id, detections=tuple(detections), seconds=round(elapsed, 4)
        )

    with client:
        if args.adapter_cmd or args.workers <= 1:
            for i, path in enumerate(paths):
                if aborted is not None:
                    results[i] = detfile.TileDetections(
                        tile_id=path.stem, detections=(), failed=True, error=aborted
                    )
                    continue
                try:
                    results[i] = run_one(path)
                except wire.AdapterConnectionError as exc:
                    aborted = str(exc)
                    _warn(f"{path.stem}: {exc}")
                    results[i] = detfile.TileDetections(
                        tile_id=path.stem, detections=(), failed=True, error=str(exc)
                    )
                except wire.WireError as exc:
                    _warn(f"{path.stem}: {exc}")
                    results[i] = detfile.TileDetections(
                        tile_id=path.stem, detections=(), failed=True, error=str(exc)
                    )
        else:

            def guarded(path: Path) -> detfile.TileDetections:
                try:
                    return run_one(path)
                except wire.WireError as exc:
                    _warn(f"{path.stem}: {exc}")
                    return detfile.TileDetections(
                        tile_id=path.stem, detections=(), failed=True, error=str(exc)
                    )

            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                results = list(pool.map(guarded, paths))

    final = [r for r in results if r is not None]
    Path(args.output).write_text(detfile.write_detections(final), encoding="utf-8")
    failed = sum(1 for r in final if r.failed)
    ok = len(final) - failed
    times = [r.seconds for r in final if r.seconds is not None]
    mean_s = sum(times) / len(times) if times else 0.0
    print(f"inferred {ok} tiles, {failed} failed, mean {mean_s:.3f}s per tile")
    return 1 if failed else 0


def _mode_summary(
    dets: dict[str, list[detpost.Detection]],
    truths: dict[str, list[evalkit.GroundTruth]],
    iou: float,
    match_mode: str,
) -> tuple[dict, evalkit.MatchResult, evalkit.PRCurve]:
    match = evalkit.match_detections(dets, truths, iou, match_mode)
    metrics = evalkit.precision_recall_f1(match)
    ap, curve = evalkit.average_precision(dets, truths, iou, "continuous", match_mode)
    summary = {
        "iou": iou,
        "tp": match.tp,
        "fp": match.fp,
        "fn": match.fn,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "ca": metrics.ca,
        "ap": ap,
        "pr_curve": [[p.recall, p.precision, p.threshold] for p in curve.points],
    }
    return summary, match, curve


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    annotations, skipped_shapes = annot.parse_via(
        _read_text(args.ground_truth), label_key=args.label_key, default_label=args.default_label
    )
    truths = evalkit.truths_from_annotations(annotations)
    det_tiles = detfile.read_detections(_read_text(args.detections))
    dets = detfile.to_mapping(det_tiles)
    failed_tiles = [t.tile_id for t in det_tiles if t.failed]

    unknown = sorted(set(dets) - set(truths))
    if unknown and not args.allow_extra:
        raise ValueError(
            f"detections reference {len(unknown)} tiles with no ground truth "
            f"(first: {', '.join(unknown[:5])}); pass --allow-extra to score them as false positives"
        )

    modes: dict[str, dict] = {}
    box_summary, box_match, _ = _mode_summary(dets, truths, args.iou, "box")
    modes[f"box@{args.iou:g}"] = box_summary
    coco_aps = {}
    for thresh in evalkit.COCO_IOU_THRESHOLDS:
        ap, _ = evalkit.average_precision(dets, truths, thresh, "101point", "box")
        coco_aps[f"{thresh:.2f}"] = ap
    modes["box@coco"] = {
        "map": sum(coco_aps.values()) / len(coco_aps),
        "ap_per_iou": coco_aps,
    }
    if args.mask:
        mask_summary, _, _ = _mode_summary(dets, truths, args.iou, "mask")
        modes[f"mask@{args.iou:g}"] = mask_summary

    config = _load_model_config(args.config)
    elapsed = time.perf_counter() - started
    n_tiles = len(set(dets) | set(truths))
    summary = {
        "record": "summary",
        "config": {
            "iou": args.iou,
            "label_key": args.label_key,
            "model": {line.split("=")[0]: line.split("=", 1)[1] for line in trainlog.write_config(config).splitlines()},
        },
        "counts": {
            "tiles": n_tiles,
            "truths": sum(len(v) for v in truths.values()),
            "detections": sum(len(v) for v in dets.values()),
            "failed_tiles": len(failed_tiles),
            "skipped_shapes": skipped_shapes,
        },
        "modes": modes,
        "timing": {
            "total_seconds": round(elapsed, 4),
            "seconds_per_tile": round(elapsed / n_tiles, 6) if n_tiles else 0.0,
        },
    }

    lines = [json.dumps(summary)]
    dets_by_tile = {t.tile_id: t for t in det_tiles}
    for tile_id in sorted(set(dets) | set(truths)):
        counts = box_match.per_tile.get(tile_id, evalkit.TileCounts(0, 0, 0))
        tile_truths = truths.get(tile_id, [])
        tile_dets = dets_by_tile.get(tile_id)
        record = {
            "record": "tile",
            "tile_id": tile_id,
            "tp": counts.tp,
            "fp": counts.fp,
            "fn": counts.fn,
            "truths": [
                {"polygon": [v for point in gt.mask[:-1] for v in point], "label": gt.label}
                for gt in tile_truths
                if gt.mask is not None
            ],
            "detections": [detfile.detection_to_obj(d) for d in (tile_dets.detections if tile_dets else ())],
            "failed": bool(tile_dets.failed) if tile_dets else False,
        }
        lines.append(json.dumps(record))
    Path(args.output).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    pr_csv_path = Path(args.output).with_suffix(".pr.csv")
    curve = evalkit.PRCurve(
        points=tuple(
            evalkit.PRPoint(recall=r, precision=p, threshold=t) for r, p, t in box_summary["pr_curve"]
        )
    )
    pr_csv_path.write_text(report.pr_curve_csv(curve), encoding="utf-8")

    headline = modes[f"box@{args.iou:g}"]
    print(
        f"box@{args.iou:g}: precision {headline['precision']:.3f} recall {headline['recall']:.3f} "
        f"f1 {headline['f1']:.3f} ca {headline['ca']:.3f} ap {headline['ap']:.3f}"
    )
    print(f"box@coco: map {modes['box@coco']['map']:.3f}")
    if failed_tiles:
        _warn(f"{len(failed_tiles)} failed tiles scored as empty: {', '.join(failed_tiles[:5])}")
    print(f"wrote report to {args.output}")
    return 0


def _load_report(path: str) -> tuple[dict, list[dict]]:
    summary = None
    tiles = []
    for index, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"report record {index}: not valid JSON: {exc}") from exc
        kind = obj.get("record")
        if kind == "summary":
            summary = obj
        elif kind == "tile":
            tiles.append(obj)
        else:
            raise ValueError(f"report record {index}: unknown record kind {kind!r}")
    if summary is None:
        raise ValueError("report has no summary record")
    return summary, tiles


def _ring_from_flat(values: list[float]) -> vector_io.Ring:
    points = [(float(values[i]), float(values[i + 1])) for i in range(0, len(values), 2)]
    points.append(points[0])
    return tuple(points)


def _summary_text(summary: dict, loss_sections: list[str]) -> str:
    lines = ["evaluation summary", "=================", ""]
    counts = summary.get("counts", {})
    for key in ("tiles", "truths", "detections", "failed_tiles", "skipped_shapes"):
        if key in counts:
            lines.append(f"{key:>15}: {counts[key]}")
    lines.append("")
    for mode, values in summary.get("modes", {}).items():
        if "precision" in values:
            lines.append(
                f"{mode}: precision {values['precision']:.4f}  recall {values['recall']:.4f}  "
                f"f1 {values['f1']:.4f}  ca {values['ca']:.4f}  ap {values['ap']:.4f}"
            )
        elif "map" in values:
            lines.append(f"{mode}: map {values['map']:.4f}")
    timing = summary.get("timing", {})
    if timing:
        lines.append("")
        lines.append(
            f"timing: {timing.get('total_seconds', 0)}s total, "
            f"{timing.get('seconds_per_tile', 0)}s per tile"
        )
    for section in loss_sections:
        lines.append("")
        lines.append(section)
    return "".join(line + "\n" for line in lines)


def cmd_report(args: argparse.Namespace) -> int:
    summary, tile_records = _load_report(args.report)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    box_mode = next((m for name, m in summary.get("modes", {}).items() if name.startswith("box@") and "pr_curve" in m), None)
    if box_mode and box_mode["pr_curve"]:
        curve = evalkit.PRCurve(
            points=tuple(evalkit.PRPoint(recall=r, precision=p, threshold=t) for r, p, t in box_mode["pr_curve"])
        )
        (out_dir / "pr_curve.svg").write_text(report.pr_curve_svg(curve), encoding="utf-8")
        (out_dir / "pr_curve.csv").write_text(report.pr_curve_csv(curve), encoding="utf-8")
    else:
        _warn("no precision-recall points in report; skipping pr_curve outputs")

    overlays = 0
    if args.tiles_dir:
        tiles_dir = Path(args.tiles_dir)
        for record in tile_records:
            tile_id = record["tile_id"]
            image_path = tiles_dir / f"{tile_id}.png"
            if not image_path.exists():
                _warn(f"tile image {image_path} missing; overlay skipped")
                continue
            truths = [_ring_from_flat(t["polygon"]) for t in record.get("truths", []) if t.get("polygon")]
            detections = [
                detfile.detection_from_obj(d, f"{tile_id} detection {i}")
                for i, d in enumerate(record.get("detections", []))
            ]
            img = raster.load_raster(image_path)
            overlay = report.draw_overlay(img, truths, detections)
            overlay.save(out_dir / f"{tile_id}_overlay.png", format="PNG")
            overlays += 1

    loss_sections = []
    loss_series = []
    for spec in args.loss_log or []:
        label, _, path = spec.partition("=")
        if not path:
            raise ValueError(f"--loss-log must be LABEL=PATH, got {spec!r}")
        loss_series.append(trainlog.parse_loss_log(_read_text(path), label=label))
    if loss_series:
        (out_dir / "loss_curves.svg").write_text(report.loss_chart_svg(loss_series), encoding="utf-8")
        for series in loss_series:
            epoch, value = trainlog.select_best_epoch(series)
            loss_sections.append(f"{series.label}: best val loss {value:.4f} at epoch {epoch}")
        if len(loss_series) >= 2:
            comparison = trainlog.compare_batch_sizes(loss_series)
            loss_sections.append("ranking by min val loss: " + ", ".join(comparison.ranking))

    (out_dir / "summary.txt").write_text(_summary_text(summary, loss_sections), encoding="utf-8")
    print(f"wrote summary and {overlays} overlays to {out_dir}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=_PROG, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", help="project surveyed vectors into pixel space")
    p.add_argument("vector", help="shapefile (.shp) or GeoJSON input")
    p.add_argument("--world", required=True, help="world file for the target raster")
    p.add_argument("--filter", help="keep only features whose tag KEY=VALUE matches")
    p.add_argument("-o", "--output", required=True, help="pixel-space GeoJSON output path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("tile", help="cut raster and annotations into tiles")
    p.add_argument("raster", help="orthomosaic (PNG or uncompressed TIFF)")
    p.add_argument("features", help="pixel-space GeoJSON from ingest")
    p.add_argument("out_dir", help="output directory for tile PNGs and annotations")
    p.add_argument("--tile-size", type=int, default=tiler.DEFAULT_TILE_SIZE)
    p.add_argument("--overlap", type=int, default=0)
    p.add_argument("--min-area-frac", type=float, default=tiler.DEFAULT_MIN_AREA_FRAC)
    p.add_argument("--point-box-side", type=float, default=tiler.DEFAULT_POINT_BOX_SIDE)
    p.add_argument("--label-key", default=None, help="feature tag holding the class label")
    p.add_argument("--default-label", default="coconut")
    p.add_argument("--keep-empty", action="store_true", help="also write tiles with no annotations")
    p.add_argument("--split", help="train,val,test ratios or counts (e.g. 0.7,0.2,0.1)")
    p.add_argument("--seed", type=int, default=0, help="shuffle seed for --split")
    p.add_argument("--workers", type=int, default=4, help="parallel tile writers")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("infer", help="run an inference adapter over tile images")
    p.add_argument("tiles", help="directory of tile PNGs")
    p.add_argument("-o", "--output", required=True, help="detection file output path")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--adapter-cmd", help="adapter command to spawn (stdio transport)")
    group.add_argument("--adapter-url", help="adapter base URL (HTTP transport)")
    p.add_argument("--min-confidence", type=float, default=None)
    p.add_argument("--max-instances", type=int, default=None)
    p.add_argument("--config", help="model config file for defaults")
    p.add_argument("--timeout", type=float, default=120.0, help="per-tile response timeout in seconds")
    p.add_argument("--workers", type=int, default=1, help="concurrent requests (HTTP only)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("postprocess", help="confidence-filter and NMS a detection file")
    p.add_argument("detections", help="raw detection file")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--min-confidence", type=float, default=None)
    p.add_argument("--max-instances", type=int, default=None)
    p.add_argument("--nms-iou", type=float, default=detpost.DEFAULT_NMS_IOU)
    p.add_argument("--config", help="model config file for defaults")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("evaluate", help="score detections against ground truth")
    p.add_argument("--ground-truth", required=True, help="VIA annotations JSON")
    p.add_argument("--detections", required=True, help="detection file to score")
    p.add_argument("-o", "--output", required=True, help="evaluation report path (JSON lines)")
    p.add_argument("--iou", type=float, default=evalkit.DEFAULT_IOU_THRESH)
    p.add_argument("--mask", action="store_true", help="also score mask IoU")
    p.add_argument("--label-key", default="label")
    p.add_argument("--default-label", default="coconut")
    p.add_argument("--allow-extra", action="store_true", help="score detections on tiles without ground truth")
    p.add_argument("--config", help="model config file echoed into the report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render overlays and charts from an evaluation report")
    p.add_argument("report", help="evaluation report from evaluate")
    p.add_argument("out_dir", help="output directory")
    p.add_argument("--tiles-dir", help="tile images for overlays")
    p.add_argument("--loss-log", action="append", metavar="LABEL=PATH", help="training loss CSV to chart (repeatable)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
