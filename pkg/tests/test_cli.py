from __future__ import annotations

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest
from PIL import Image, ImageDraw

import stub_adapter
from aerialdet import cli
from aerialdet.annot import parse_via
from aerialdet.detfile import TileDetections, detection_to_obj, read_detections, write_detections
from aerialdet.detpost import Box, Detection

from conftest import DATA_DIR, build_dbf, build_shp, point_record, polygon_record

STUB = Path(__file__).parent / "stub_adapter.py"

# World file whose transform is pixel (col, row) <-> geo (x, -y).
IDENTITY_WORLD = "1.0\n0.0\n0.0\n-1.0\n0.5\n-0.5\n"


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def geo_square(x0, y0, x1, y1):
    """Geo-space ring that projects to the pixel-space rect (x0,y0,x1,y1)
    under IDENTITY_WORLD."""
    return [[x0, -y0], [x1, -y0], [x1, -y1], [x0, -y1], [x0, -y0]]


def geo_collection(rects, label="coconut"):
    features = [
        {
            "type": "Feature",
            "properties": {"label": label},
            "geometry": {"type": "Polygon", "coordinates": [geo_square(*rect)]},
        }
        for rect in rects
    ]
    return json.dumps({"type": "FeatureCollection", "features": features})


def pixel_collection(rects, label="coconut"):
    features = [
        {
            "type": "Feature",
            "properties": {"label": label},
            "geometry": {
                "type": "Polygon",
                "coordinates": [[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]],
            },
        }
        for x0, y0, x1, y1 in rects
    ]
    return json.dumps({"type": "FeatureCollection", "features": features})


def ring_bbox(ring):
    xs = [p[0] for p in ring]
    ys = [p[1] for p in ring]
    return min(xs), min(ys), max(xs), max(ys)


def make_raster(path, width, height, squares=()):
    img = Image.new("RGB", (width, height), (52, 70, 44))
    draw = ImageDraw.Draw(img)
    for x0, y0, x1, y1 in squares:
        draw.rectangle((x0, y0, x1 - 1, y1 - 1), fill=(180, 200, 90))
    img.save(path, format="PNG")


def canned_from_via(via_path, canned_path, score=0.97):
    """Detection file matching the ground truth exactly, for the stub."""
    tiles, _ = parse_via(via_path.read_text(), label_key="label", default_label="coconut")
    records = []
    for tile in tiles:
        dets = []
        for ring, label in tile.polygons:
            x0, y0, x1, y1 = ring_bbox(ring)
            dets.append(Detection(box=Box(x0, y0, x1, y1), score=score, label=label, mask=ring))
        records.append(TileDetections(tile_id=tile.tile_id, detections=tuple(dets)))
    canned_path.write_text(write_detections(records))
    return records


@pytest.fixture()
def world_file(tmp_path):
    path = tmp_path / "ortho.pgw"
    path.write_text(IDENTITY_WORLD)
    return path


# --- ingest ---


def test_ingest_geojson_to_pixels(tmp_path, world_file, capsys):
    vector = tmp_path / "trees.geojson"
    vector.write_text(geo_collection([(10, 10, 20, 20), (100, 40, 160, 90)]))
    out = tmp_path / "features.json"
    assert run_cli("ingest", vector, "--world", world_file, "-o", out) == 0
    doc = json.loads(out.read_text())
    assert len(doc["features"]) == 2
    boxes = sorted(ring_bbox(f["geometry"]["coordinates"][0]) for f in doc["features"])
    assert boxes == [(10.0, 10.0, 20.0, 20.0), (100.0, 40.0, 160.0, 90.0)]
    assert "wrote 2 pixel-space features" in capsys.readouterr().out


def test_ingest_shapefile_with_filter(tmp_path, world_file, capsys):
    ring_a = [(10.0, -10.0), (10.0, -20.0), (20.0, -20.0), (20.0, -10.0), (10.0, -10.0)]
    ring_b = [(50.0, -10.0), (50.0, -20.0), (60.0, -20.0), (60.0, -10.0), (50.0, -10.0)]
    shp = build_shp(5, [polygon_record(1, [ring_a]), polygon_record(2, [ring_b])])
    dbf = build_dbf([("TREE", "C", 10)], [["coconut"], ["banana"]])
    (tmp_path / "trees.shp").write_bytes(shp)
    (tmp_path / "trees.dbf").write_bytes(dbf)
    out = tmp_path / "features.json"
    code = run_cli(
        "ingest", tmp_path / "trees.shp", "--world", world_file, "--filter", "TREE=coconut", "-o", out
    )
    assert code == 0
    doc = json.loads(out.read_text())
    assert len(doc["features"]) == 1
    assert doc["features"][0]["properties"]["TREE"] == "coconut"
    assert ring_bbox(doc["features"][0]["geometry"]["coordinates"][0]) == (10.0, 10.0, 20.0, 20.0)


def test_ingest_point_shapefile(tmp_path, world_file):
    shp = build_shp(1, [point_record(1, 15.0, -25.0)])
    (tmp_path / "pts.shp").write_bytes(shp)
    out = tmp_path / "features.json"
    assert run_cli("ingest", tmp_path / "pts.shp", "--world", world_file, "-o", out) == 0
    doc = json.loads(out.read_text())
    assert doc["features"][0]["geometry"]["coordinates"] == [15.0, 25.0]


def test_ingest_filter_without_match_warns(tmp_path, world_file, capsys):
    vector = tmp_path / "trees.geojson"
    vector.write_text(geo_collection([(10, 10, 20, 20)]))
    out = tmp_path / "features.json"
    code = run_cli("ingest", vector, "--world", world_file, "--filter", "label=banana", "-o", out)
    assert code == 0
    assert "matched no features" in capsys.readouterr().err
    assert json.loads(out.read_text())["features"] == []


def test_ingest_missing_world_file(tmp_path, capsys):
    vector = tmp_path / "trees.geojson"
    vector.write_text(geo_collection([(10, 10, 20, 20)]))
    code = run_cli("ingest", vector, "--world", tmp_path / "missing.pgw", "-o", tmp_path / "o.json")
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_ingest_corrupt_shapefile(tmp_path, world_file, capsys):
    (tmp_path / "bad.shp").write_bytes(b"\x00" * 64)
    code = run_cli("ingest", tmp_path / "bad.shp", "--world", world_file, "-o", tmp_path / "o.json")
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_no_command_prints_help(capsys):
    assert cli.main([]) == 2
    assert "ingest" in capsys.readouterr().err


# --- tile ---


def tile_squares_fixture(tmp_path, width=3000, height=2000):
    """One 80px square centered in each 1000px tile of a width x height raster."""
    rects = []
    for row in range(height // 1000):
        for col in range(width // 1000):
            cx, cy = col * 1000 + 500, row * 1000 + 500
            rects.append((cx - 40, cy - 40, cx + 40, cy + 40))
    raster = tmp_path / "ortho.png"
    make_raster(raster, width, height, rects)
    features = tmp_path / "features.json"
    features.write_text(pixel_collection(rects))
    return raster, features, rects


def test_tile_grid_outputs(tmp_path, capsys):
    raster, features, rects = tile_squares_fixture(tmp_path)
    out_dir = tmp_path / "tiles"
    assert run_cli("tile", raster, features, out_dir) == 0
    pngs = sorted(p.name for p in out_dir.glob("*.png"))
    assert pngs == [
        "r00_c00.png", "r00_c01.png", "r00_c02.png",
        "r01_c00.png", "r01_c01.png", "r01_c02.png",
    ]
    for png in pngs:
        assert Image.open(out_dir / png).size == (1000, 1000)
    via = json.loads((out_dir / "via_annotations.json").read_text())
    assert len(via) == 6
    for entry in via.values():
        assert len(entry["regions"]) == 1
        shape = entry["regions"][0]["shape_attributes"]
        assert shape["name"] == "polygon"
        assert min(shape["all_points_x"]) == 460
        assert max(shape["all_points_x"]) == 540
    assert "wrote 6 tiles (6 annotated, 6 polygons)" in capsys.readouterr().out


def test_tile_split_written(tmp_path):
    raster, features, _ = tile_squares_fixture(tmp_path)
    out_dir = tmp_path / "tiles"
    assert run_cli("tile", raster, features, out_dir, "--split", "0.7,0.2,0.1", "--seed", 7) == 0
    split = json.loads((out_dir / "splits.json").read_text())
    assert (len(split["train"]), len(split["val"]), len(split["test"])) == (4, 1, 1)
    all_ids = split["train"] + split["val"] + split["test"]
    assert sorted(all_ids) == [f"r{r:02d}_c{c:02d}" for r in range(2) for c in range(3)]
    assert len(set(all_ids)) == 6
    assert split["seed"] == 7


def test_tile_raster_smaller_than_tile(tmp_path):
    raster = tmp_path / "small.png"
    make_raster(raster, 640, 480)
    features = tmp_path / "features.json"
    features.write_text(pixel_collection([(100, 100, 160, 160)]))
    out_dir = tmp_path / "tiles"
    assert run_cli("tile", raster, features, out_dir) == 0
    assert Image.open(out_dir / "r00_c00.png").size == (640, 480)
    via = json.loads((out_dir / "via_annotations.json").read_text())
    assert len(via) == 1


def test_tile_keep_empty(tmp_path):
    raster = tmp_path / "ortho.png"
    make_raster(raster, 2000, 1000)
    features = tmp_path / "features.json"
    features.write_text(pixel_collection([(100, 100, 180, 180)]))
    out_dir = tmp_path / "tiles"
    assert run_cli("tile", raster, features, out_dir) == 0
    assert sorted(p.name for p in out_dir.glob("*.png")) == ["r00_c00.png"]

    out_dir2 = tmp_path / "tiles_all"
    assert run_cli("tile", raster, features, out_dir2, "--keep-empty") == 0
    assert sorted(p.name for p in out_dir2.glob("*.png")) == ["r00_c00.png", "r00_c01.png"]
    via = json.loads((out_dir2 / "via_annotations.json").read_text())
    empties = [e for e in via.values() if not e["regions"]]
    assert len(empties) == 1


def test_tile_lint_warning_for_tiny_polygon(tmp_path, capsys):
    raster = tmp_path / "ortho.png"
    make_raster(raster, 1000, 1000)
    features = tmp_path / "features.json"
    features.write_text(pixel_collection([(10, 10, 13, 13)]))
    out_dir = tmp_path / "tiles"
    assert run_cli("tile", raster, features, out_dir, "--min-area-frac", "0.0") == 0
    assert "r00_c00 polygon 0" in capsys.readouterr().err


# --- postprocess ---


def disjoint_detections(n, score_fn, tile_id="r00_c00"):
    dets = []
    for i in range(n):
        x = (i % 40) * 24.0
        y = (i // 40) * 24.0
        dets.append(Detection(box=Box(x, y, x + 20, y + 20), score=score_fn(i)))
    return [TileDetections(tile_id=tile_id, detections=tuple(dets))]


def test_postprocess_filters_and_caps(tmp_path, capsys):
    tiles = disjoint_detections(150, lambda i: 0.992 - i * 0.001)  # 93 at or above 0.9
    raw = tmp_path / "raw.jsonl"
    raw.write_text(write_detections(tiles))
    out = tmp_path / "post.jsonl"
    assert run_cli("postprocess", raw, "-o", out) == 0
    kept = read_detections(out.read_text())[0].detections
    assert len(kept) == 93
    assert all(d.score >= 0.9 for d in kept)
    assert "kept 93 of 150" in capsys.readouterr().out


def test_postprocess_caps_at_max_instances(tmp_path):
    tiles = disjoint_detections(150, lambda i: 0.99 - i * 0.0001)  # all above 0.9
    raw = tmp_path / "raw.jsonl"
    raw.write_text(write_detections(tiles))
    out = tmp_path / "post.jsonl"
    assert run_cli("postprocess", raw, "-o", out) == 0
    kept = read_detections(out.read_text())[0].detections
    assert len(kept) == 100
    assert min(d.score for d in kept) >= 0.99 - 99 * 0.0001 - 1e-9


def test_postprocess_nms_merges_duplicates(tmp_path):
    tiles = [
        TileDetections(
            tile_id="t",
            detections=(
                Detection(box=Box(0, 0, 100, 100), score=0.98),
                Detection(box=Box(4, 4, 104, 104), score=0.95),
                Detection(box=Box(300, 300, 400, 400), score=0.93),
            ),
        )
    ]
    raw = tmp_path / "raw.jsonl"
    raw.write_text(write_detections(tiles))
    out = tmp_path / "post.jsonl"
    assert run_cli("postprocess", raw, "-o", out) == 0
    kept = read_detections(out.read_text())[0].detections
    assert [d.score for d in kept] == [0.98, 0.93]


def test_postprocess_idempotent(tmp_path):
    tiles = disjoint_detections(120, lambda i: 0.99 - i * 0.0005)
    raw = tmp_path / "raw.jsonl"
    raw.write_text(write_detections(tiles))
    once = tmp_path / "once.jsonl"
    twice = tmp_path / "twice.jsonl"
    assert run_cli("postprocess", raw, "-o", once) == 0
    assert run_cli("postprocess", once, "-o", twice) == 0
    assert once.read_text() == twice.read_text()


def test_postprocess_failed_tile_passes_through(tmp_path):
    tiles = [
        TileDetections(tile_id="ok", detections=(Detection(box=Box(0, 0, 10, 10), score=0.95),)),
        TileDetections(tile_id="down", detections=(), failed=True, error="adapter gone"),
    ]
    raw = tmp_path / "raw.jsonl"
    raw.write_text(write_detections(tiles))
    out = tmp_path / "post.jsonl"
    assert run_cli("postprocess", raw, "-o", out) == 0
    parsed = {t.tile_id: t for t in read_detections(out.read_text())}
    assert parsed["down"].failed is True
    assert parsed["down"].error == "adapter gone"
    assert len(parsed["ok"].detections) == 1


def test_postprocess_config_and_override(tmp_path):
    tiles = [
        TileDetections(tile_id="t", detections=(Detection(box=Box(0, 0, 10, 10), score=0.6),))
    ]
    raw = tmp_path / "raw.jsonl"
    raw.write_text(write_detections(tiles))
    config = tmp_path / "model.cfg"
    config.write_text("detection_min_confidence=0.5\n")

    out = tmp_path / "post.jsonl"
    assert run_cli("postprocess", raw, "-o", out, "--config", config) == 0
    assert len(read_detections(out.read_text())[0].detections) == 1

    assert run_cli("postprocess", raw, "-o", out, "--config", config, "--min-confidence", "0.8") == 0
    assert read_detections(out.read_text())[0].detections == ()


def test_postprocess_malformed_input(tmp_path, capsys):
    raw = tmp_path / "raw.jsonl"
    raw.write_text('{"detections": []}\n')
    assert run_cli("postprocess", raw, "-o", tmp_path / "o.jsonl") == 2
    assert "tile_id" in capsys.readouterr().err


# --- infer ---


def make_tiles_dir(tmp_path, tile_ids, size=64):
    tiles_dir = tmp_path / "tiles"
    tiles_dir.mkdir(exist_ok=True)
    for tile_id in tile_ids:
        make_raster(tiles_dir / f"{tile_id}.png", size, size)
    return tiles_dir


def canned_for(tmp_path, tile_ids, score=0.95):
    records = [
        TileDetections(
            tile_id=tile_id,
            detections=(Detection(box=Box(4, 4, 24, 24), score=score),),
        )
        for tile_id in tile_ids
    ]
    canned = tmp_path / "canned.jsonl"
    canned.write_text(write_detections(records))
    return canned


def stub_cmd(canned=None, mode="normal"):
    parts = [sys.executable, str(STUB)]
    if canned is not None:
        parts += ["--canned", str(canned)]
    if mode != "normal":
        parts += ["--mode", mode]
    return " ".join(parts)


def test_infer_stdio(tmp_path, capsys):
    tiles_dir = make_tiles_dir(tmp_path, ["r00_c00", "r00_c01"])
    canned = canned_for(tmp_path, ["r00_c00", "r00_c01"])
    out = tmp_path / "dets.jsonl"
    assert run_cli("infer", tiles_dir, "-o", out, "--adapter-cmd", stub_cmd(canned)) == 0
    parsed = read_detections(out.read_text())
    assert [t.tile_id for t in parsed] == ["r00_c00", "r00_c01"]
    for tile in parsed:
        assert not tile.failed
        assert len(tile.detections) == 1
        assert tile.seconds is not None and tile.seconds >= 0
    assert "inferred 2 tiles, 0 failed" in capsys.readouterr().out


def test_infer_applies_confidence_floor(tmp_path):
    tiles_dir = make_tiles_dir(tmp_path, ["r00_c00"])
    canned = canned_for(tmp_path, ["r00_c00"], score=0.7)
    out = tmp_path / "dets.jsonl"
    assert run_cli("infer", tiles_dir, "-o", out, "--adapter-cmd", stub_cmd(canned)) == 0
    assert read_detections(out.read_text())[0].detections == ()
    assert run_cli(
        "infer", tiles_dir, "-o", out, "--adapter-cmd", stub_cmd(canned), "--min-confidence", "0.5"
    ) == 0
    assert len(read_detections(out.read_text())[0].detections) == 1


def test_infer_bad_score_fails_tile(tmp_path, capsys):
    tiles_dir = make_tiles_dir(tmp_path, ["r00_c00"])
    canned = canned_for(tmp_path, ["r00_c00"])
    out = tmp_path / "dets.jsonl"
    code = run_cli("infer", tiles_dir, "-o", out, "--adapter-cmd", stub_cmd(canned, "bad-score"))
    assert code == 1
    parsed = read_detections(out.read_text())
    assert parsed[0].failed is True
    assert "schema-invalid" in parsed[0].error
    assert "1 failed" in capsys.readouterr().out


def test_infer_adapter_death_fails_remaining(tmp_path, capsys):
    tiles_dir = make_tiles_dir(tmp_path, ["r00_c00", "r00_c01", "r00_c02"])
    out = tmp_path / "dets.jsonl"
    code = run_cli("infer", tiles_dir, "-o", out, "--adapter-cmd", stub_cmd(mode="die"))
    assert code == 1
    parsed = read_detections(out.read_text())
    assert len(parsed) == 3
    assert all(t.failed for t in parsed)


def test_infer_empty_dir(tmp_path, capsys):
    tiles_dir = tmp_path / "tiles"
    tiles_dir.mkdir()
    out = tmp_path / "dets.jsonl"
    assert run_cli("infer", tiles_dir, "-o", out, "--adapter-cmd", stub_cmd()) == 0
    assert out.read_text() == ""
    assert "no tiles" in capsys.readouterr().out


def test_infer_missing_dir(tmp_path, capsys):
    code = run_cli(
        "infer", tmp_path / "nope", "-o", tmp_path / "o.jsonl", "--adapter-cmd", stub_cmd()
    )
    assert code == 2
    assert "does not exist" in capsys.readouterr().err


@pytest.fixture()
def http_stub(tmp_path):
    canned = {
        "r00_c00": [detection_to_obj(Detection(box=Box(4, 4, 24, 24), score=0.95))],
        "r00_c01": [],
    }

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length") or 0)
            body = json.loads(self.rfile.read(length))
            data = json.dumps(stub_adapter.handle(body, canned, "normal")).encode()
            self.send_response(200)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    thread.join(timeout=5)


def test_infer_http_with_workers(tmp_path, http_stub):
    tiles_dir = make_tiles_dir(tmp_path, ["r00_c00", "r00_c01"])
    out = tmp_path / "dets.jsonl"
    code = run_cli("infer", tiles_dir, "-o", out, "--adapter-url", http_stub, "--workers", 2)
    assert code == 0
    parsed = {t.tile_id: t for t in read_detections(out.read_text())}
    assert len(parsed["r00_c00"].detections) == 1
    assert parsed["r00_c01"].detections == ()


# --- evaluate ---


def via_ground_truth(tmp_path, tiles):
    """Write a VIA annotation file; tiles maps tile_id -> list of pixel rects."""
    entries = {}
    for tile_id, rects in tiles.items():
        regions = [
            {
                "shape_attributes": {
                    "name": "polygon",
                    "all_points_x": [x0, x1, x1, x0],
                    "all_points_y": [y0, y0, y1, y1],
                },
                "region_attributes": {"label": "coconut"},
            }
            for x0, y0, x1, y1 in rects
        ]
        entries[f"{tile_id}.png100"] = {
            "filename": f"{tile_id}.png",
            "size": 100,
            "regions": regions,
            "file_attributes": {},
        }
    path = tmp_path / "via_annotations.json"
    path.write_text(json.dumps(entries))
    return path


def detections_file(tmp_path, tiles, name="dets.jsonl", score=0.95):
    records = []
    for tile_id, rects in tiles.items():
        dets = tuple(
            Detection(box=Box(x0, y0, x1, y1), score=score - 0.001 * i)
            for i, (x0, y0, x1, y1) in enumerate(rects)
        )
        records.append(TileDetections(tile_id=tile_id, detections=dets))
    path = tmp_path / name
    path.write_text(write_detections(records))
    return path


def read_report(path):
    lines = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    summary = next(r for r in lines if r["record"] == "summary")
    tiles = [r for r in lines if r["record"] == "tile"]
    return summary, tiles


def test_evaluate_perfect_detections(tmp_path, capsys):
    rects = {"r00_c00": [(10, 10, 60, 60), (200, 200, 260, 270)], "r00_c01": [(30, 40, 90, 100)]}
    gt = via_ground_truth(tmp_path, rects)
    dets = detections_file(tmp_path, rects)
    out = tmp_path / "report.jsonl"
    assert run_cli("evaluate", "--ground-truth", gt, "--detections", dets, "-o", out) == 0
    summary, tiles = read_report(out)
    box = summary["modes"]["box@0.5"]
    assert box["tp"] == 3 and box["fp"] == 0 and box["fn"] == 0
    assert box["precision"] == 1.0 and box["recall"] == 1.0 and box["f1"] == 1.0
    assert box["ap"] == pytest.approx(1.0)
    assert summary["modes"]["box@coco"]["map"] == pytest.approx(1.0)
    assert summary["counts"] == {
        "tiles": 2, "truths": 3, "detections": 3, "failed_tiles": 0, "skipped_shapes": 0,
    }
    assert len(tiles) == 2
    assert (tmp_path / "report.pr.csv").exists()
    csv_lines = (tmp_path / "report.pr.csv").read_text().splitlines()
    assert csv_lines[0] == "recall,precision,threshold"
    assert len(csv_lines) == 4
    out_text = capsys.readouterr().out
    assert "f1 1.000" in out_text
    assert "map 1.000" in out_text


def test_evaluate_interleaved_ranks(tmp_path):
    gt = via_ground_truth(tmp_path, {"t": [(0, 0, 100, 100), (300, 300, 400, 400)]})
    records = [
        TileDetections(
            tile_id="t",
            detections=(
                Detection(box=Box(0, 0, 100, 100), score=0.9),
                Detection(box=Box(600, 600, 700, 700), score=0.8),
                Detection(box=Box(300, 300, 400, 400), score=0.7),
            ),
        )
    ]
    dets = tmp_path / "dets.jsonl"
    dets.write_text(write_detections(records))
    out = tmp_path / "report.jsonl"
    assert run_cli("evaluate", "--ground-truth", gt, "--detections", dets, "-o", out) == 0
    summary, _ = read_report(out)
    box = summary["modes"]["box@0.5"]
    assert box["ap"] == pytest.approx(5 / 6)
    assert box["tp"] == 2 and box["fp"] == 1
    assert box["pr_curve"] == [
        [0.5, 1.0, 0.9],
        [0.5, 0.5, 0.8],
        [1.0, pytest.approx(2 / 3), 0.7],
    ]


def test_evaluate_no_detections(tmp_path):
    gt = via_ground_truth(tmp_path, {"t": [(0, 0, 100, 100), (300, 300, 400, 400)]})
    dets = tmp_path / "dets.jsonl"
    dets.write_text("")
    out = tmp_path / "report.jsonl"
    assert run_cli("evaluate", "--ground-truth", gt, "--detections", dets, "-o", out) == 0
    summary, tiles = read_report(out)
    box = summary["modes"]["box@0.5"]
    assert box["recall"] == 0.0 and box["fn"] == 2
    assert box["ap"] == 0.0
    assert len(tiles) == 1
    assert tiles[0]["fn"] == 2


def test_evaluate_strict_about_unknown_tiles(tmp_path, capsys):
    gt = via_ground_truth(tmp_path, {"known": [(0, 0, 100, 100)]})
    dets = detections_file(tmp_path, {"known": [(0, 0, 100, 100)], "mystery": [(5, 5, 50, 50)]})
    out = tmp_path / "report.jsonl"
    code = run_cli("evaluate", "--ground-truth", gt, "--detections", dets, "-o", out)
    assert code == 2
    assert "--allow-extra" in capsys.readouterr().err

    code = run_cli("evaluate", "--ground-truth", gt, "--detections", dets, "-o", out, "--allow-extra")
    assert code == 0
    summary, _ = read_report(out)
    assert summary["modes"]["box@0.5"]["fp"] == 1


def test_evaluate_mask_mode_diverges(tmp_path):
    gt_path = tmp_path / "via_annotations.json"
    gt_path.write_text(
        json.dumps(
            {
                "t.png100": {
                    "filename": "t.png",
                    "size": 100,
                    "regions": [
                        {
                            "shape_attributes": {
                                "name": "polygon",
                                "all_points_x": [0, 100, 0],
                                "all_points_y": [0, 0, 100],
                            },
                            "region_attributes": {"label": "coconut"},
                        }
                    ],
                    "file_attributes": {},
                }
            }
        )
    )
    square = ((0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0), (0.0, 0.0))
    records = [
        TileDetections(
            tile_id="t",
            detections=(Detection(box=Box(0, 0, 100, 100), score=0.9, mask=square),),
        )
    ]
    dets = tmp_path / "dets.jsonl"
    dets.write_text(write_detections(records))
    out = tmp_path / "report.jsonl"
    code = run_cli(
        "evaluate", "--ground-truth", gt_path, "--detections", dets, "-o", out, "--mask", "--iou", "0.6"
    )
    assert code == 0
    summary, _ = read_report(out)
    assert summary["modes"]["box@0.6"]["tp"] == 1
    assert summary["modes"]["mask@0.6"]["tp"] == 0


def test_evaluate_failed_tiles_count_as_missed(tmp_path, capsys):
    gt = via_ground_truth(tmp_path, {"up": [(0, 0, 100, 100)], "down": [(0, 0, 100, 100)]})
    records = [
        TileDetections(
            tile_id="up", detections=(Detection(box=Box(0, 0, 100, 100), score=0.95),)
        ),
        TileDetections(tile_id="down", detections=(), failed=True, error="timeout"),
    ]
    dets = tmp_path / "dets.jsonl"
    dets.write_text(write_detections(records))
    out = tmp_path / "report.jsonl"
    assert run_cli("evaluate", "--ground-truth", gt, "--detections", dets, "-o", out) == 0
    summary, tiles = read_report(out)
    assert summary["counts"]["failed_tiles"] == 1
    assert summary["modes"]["box@0.5"]["fn"] == 1
    by_id = {t["tile_id"]: t for t in tiles}
    assert by_id["down"]["failed"] is True
    assert "failed tiles scored as empty" in capsys.readouterr().err


# --- report ---


def evaluated_fixture(tmp_path):
    rects = {"r00_c00": [(10, 10, 60, 60)], "r00_c01": [(30, 40, 90, 100)]}
    gt = via_ground_truth(tmp_path, rects)
    dets = detections_file(tmp_path, rects)
    report_path = tmp_path / "report.jsonl"
    assert run_cli("evaluate", "--ground-truth", gt, "--detections", dets, "-o", report_path) == 0
    tiles_dir = make_tiles_dir(tmp_path, ["r00_c00", "r00_c01"], size=200)
    return report_path, tiles_dir


def test_report_full_outputs(tmp_path, capsys):
    report_path, tiles_dir = evaluated_fixture(tmp_path)
    out_dir = tmp_path / "report_out"
    assert run_cli("report", report_path, out_dir, "--tiles-dir", tiles_dir) == 0
    assert (out_dir / "pr_curve.svg").exists()
    assert (out_dir / "pr_curve.csv").exists()
    assert (out_dir / "r00_c00_overlay.png").exists()
    assert (out_dir / "r00_c01_overlay.png").exists()
    summary_text = (out_dir / "summary.txt").read_text()
    assert "box@0.5" in summary_text
    assert "truths" in summary_text
    assert "wrote summary and 2 overlays" in capsys.readouterr().out


def test_report_without_tiles_dir(tmp_path):
    report_path, _ = evaluated_fixture(tmp_path)
    out_dir = tmp_path / "report_out"
    assert run_cli("report", report_path, out_dir) == 0
    assert not list(out_dir.glob("*_overlay.png"))
    assert (out_dir / "summary.txt").exists()


def test_report_missing_tile_image_warns(tmp_path, capsys):
    report_path, tiles_dir = evaluated_fixture(tmp_path)
    (tiles_dir / "r00_c01.png").unlink()
    out_dir = tmp_path / "report_out"
    assert run_cli("report", report_path, out_dir, "--tiles-dir", tiles_dir) == 0
    assert (out_dir / "r00_c00_overlay.png").exists()
    assert not (out_dir / "r00_c01_overlay.png").exists()
    assert "overlay skipped" in capsys.readouterr().err


def test_report_loss_logs(tmp_path):
    report_path, _ = evaluated_fixture(tmp_path)
    out_dir = tmp_path / "report_out"
    code = run_cli(
        "report", report_path, out_dir,
        "--loss-log", f"bs1={DATA_DIR / 'loss_bs1.csv'}",
        "--loss-log", f"bs5={DATA_DIR / 'loss_bs5.csv'}",
        "--loss-log", f"bs10={DATA_DIR / 'loss_bs10.csv'}",
    )
    assert code == 0
    assert (out_dir / "loss_curves.svg").exists()
    summary_text = (out_dir / "summary.txt").read_text()
    assert "bs1: best val loss 1.1546 at epoch 35" in summary_text
    assert "bs10: best val loss 1.1225 at epoch 40" in summary_text
    assert "ranking by min val loss: bs10, bs1, bs5" in summary_text


def test_report_empty_curve_warns(tmp_path, capsys):
    gt = via_ground_truth(tmp_path, {"t": [(0, 0, 100, 100)]})
    dets = tmp_path / "dets.jsonl"
    dets.write_text("")
    report_path = tmp_path / "report.jsonl"
    assert run_cli("evaluate", "--ground-truth", gt, "--detections", dets, "-o", report_path) == 0
    out_dir = tmp_path / "report_out"
    assert run_cli("report", report_path, out_dir) == 0
    assert "skipping pr_curve" in capsys.readouterr().err
    assert not (out_dir / "pr_curve.svg").exists()
    assert (out_dir / "summary.txt").exists()


def test_report_bad_loss_spec(tmp_path, capsys):
    report_path, _ = evaluated_fixture(tmp_path)
    code = run_cli("report", report_path, tmp_path / "out", "--loss-log", "nolabel")
    assert code == 2
    assert "LABEL=PATH" in capsys.readouterr().err


def test_report_rejects_malformed_report(tmp_path, capsys):
    bad = tmp_path / "report.jsonl"
    bad.write_text('{"record": "tile", "tile_id": "t"}\n')
    assert run_cli("report", bad, tmp_path / "out") == 2
    assert "no summary record" in capsys.readouterr().err


# --- full pipeline ---


def test_pipeline_end_to_end(tmp_path, capsys):
    # Survey -> ingest -> tile -> infer -> postprocess -> evaluate -> report.
    rects = [
        (220, 180, 300, 260), (700, 420, 780, 500),
        (1250, 150, 1330, 230), (1600, 700, 1680, 780),
    ]
    raster = tmp_path / "ortho.png"
    make_raster(raster, 2000, 1000, rects)
    (tmp_path / "ortho.pgw").write_text(IDENTITY_WORLD)
    survey = tmp_path / "survey.geojson"
    survey.write_text(geo_collection(rects))

    features = tmp_path / "features.json"
    assert run_cli("ingest", survey, "--world", tmp_path / "ortho.pgw", "-o", features) == 0

    tiles_dir = tmp_path / "tiles"
    assert run_cli("tile", raster, features, tiles_dir) == 0
    assert sorted(p.name for p in tiles_dir.glob("*.png")) == ["r00_c00.png", "r00_c01.png"]

    canned = tmp_path / "canned.jsonl"
    canned_from_via(tiles_dir / "via_annotations.json", canned)
    raw = tmp_path / "raw.jsonl"
    assert run_cli("infer", tiles_dir, "-o", raw, "--adapter-cmd", stub_cmd(canned)) == 0

    post = tmp_path / "post.jsonl"
    assert run_cli("postprocess", raw, "-o", post) == 0

    report_path = tmp_path / "report.jsonl"
    code = run_cli(
        "evaluate",
        "--ground-truth", tiles_dir / "via_annotations.json",
        "--detections", post,
        "-o", report_path,
        "--mask",
    )
    assert code == 0
    summary, tile_records = read_report(report_path)
    box = summary["modes"]["box@0.5"]
    assert (box["tp"], box["fp"], box["fn"]) == (4, 0, 0)
    assert box["f1"] == 1.0
    assert box["ap"] == pytest.approx(1.0)
    assert summary["modes"]["mask@0.5"]["f1"] == 1.0
    assert summary["modes"]["box@coco"]["map"] == pytest.approx(1.0)

    out_dir = tmp_path / "final"
    assert run_cli("report", report_path, out_dir, "--tiles-dir", tiles_dir) == 0
    assert (out_dir / "r00_c00_overlay.png").exists()
    assert (out_dir / "r00_c01_overlay.png").exists()
    assert (out_dir / "pr_curve.csv").exists()
