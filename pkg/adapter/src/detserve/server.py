"""Transports: line-delimited JSON on stdio, or HTTP POST /infer.

Both framings answer every request on the same channel — a malformed line
or body gets an error response, never a dropped connection. One request is
in flight per connection; the peer decides how many connections to open.
"""

from __future__ import annotations

import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import IO

from .config import AdapterConfig
from .protocol import error_response, handle_request
from .stub import StubDetector, load_fixture


def build_detector(config: AdapterConfig, raw_cap: int = 100):
    if config.stub:
        canned = load_fixture(config.stub_fixture) if config.stub_fixture else {}
        return StubDetector(canned)
    # deferred so stub mode never pays the torch import
    from .model import ModelDetector, load_model

    model = load_model(config, raw_cap=raw_cap)
    return ModelDetector(model, device=config.device, labels=config.labels)


def run_stdio(detector, stdin: IO[str] | None = None, stdout: IO[str] | None = None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            payload = error_response(None, "request is not valid JSON")
        else:
            payload = handle_request(obj, detector)
        stdout.write(json.dumps(payload) + "\n")
        stdout.flush()
    return 0


class _InferHandler(BaseHTTPRequestHandler):
    detector = None

    def _respond(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        if self.path.rstrip("/") != "/infer":
            self._respond(404, {"error": f"unknown path {self.path}"})
            return
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        try:
            obj = json.loads(body)
        except json.JSONDecodeError:
            self._respond(200, error_response(None, "request is not valid JSON"))
            return
        self._respond(200, handle_request(obj, self.detector))

    def log_message(self, format: str, *args) -> None:  # quiet by default
        pass


def build_http_server(detector, host: str, port: int) -> ThreadingHTTPServer:
    """Bind an HTTP server for the detector; port 0 picks a free port."""
    handler = type("BoundInferHandler", (_InferHandler,), {"detector": detector})
    return ThreadingHTTPServer((host, port), handler)


def serve(config: AdapterConfig, raw_cap: int = 100) -> int:
    detector = build_detector(config, raw_cap=raw_cap)
    if config.transport == "stdio":
        return run_stdio(detector)
    server = build_http_server(detector, config.host, config.port)
    host, port = server.server_address[:2]
    print(f"listening on http://{host}:{port}/infer", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0
