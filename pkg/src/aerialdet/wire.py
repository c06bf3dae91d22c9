"""Client side of the inference wire protocol.

Requests and responses are single JSON objects, one per line on stdio or one
per HTTP POST body. A request carries a protocol version, a tile id, the
tile image as base64 PNG, and the confidence/instance limits the adapter
must apply:

    {"protocol": 1, "tile_id": "r00_c01", "image": "<base64>",
     "min_confidence": 0.9, "max_instances": 100}

A response echoes the version and tile id with a detection list in the
detection-file schema, or an "error" string instead. Responses with a
different protocol version or a malformed body are rejected.
"""

from __future__ import annotations

import base64
import json
import select
import shlex
import subprocess
import urllib.error
import urllib.request
from typing import Sequence

from .detfile import DetectionFileError, detection_from_obj
from .detpost import Detection

PROTOCOL_VERSION = 1


class WireError(ValueError):
    """Raised when an adapter exchange fails for one tile."""


class AdapterConnectionError(WireError):
    """Raised when the adapter itself is gone; no further tiles will work."""


def build_request(
    tile_id: str, png_bytes: bytes, min_confidence: float, max_instances: int
) -> dict:
    return {
        "protocol": PROTOCOL_VERSION,
        "tile_id": tile_id,
        "image": base64.b64encode(png_bytes).decode("ascii"),
        "min_confidence": min_confidence,
        "max_instances": max_instances,
    }


def parse_response(obj: object, expect_tile_id: str) -> list[Detection]:
    """Validate one adapter response and extract its detections."""
    if not isinstance(obj, dict):
        raise WireError("response must be a JSON object")
    version = obj.get("protocol")
    if version != PROTOCOL_VERSION:
        raise WireError(f"protocol version mismatch: expected {PROTOCOL_VERSION}, got {version!r}")
    if obj.get("error"):
        raise WireError(f"adapter error: {obj['error']}")
    if obj.get("tile_id") != expect_tile_id:
        raise WireError(f"response tile_id {obj.get('tile_id')!r} does not match request {expect_tile_id!r}")
    raw = obj.get("detections")
    if not isinstance(raw, list):
        raise WireError("response has no detections list")
    try:
        return [detection_from_obj(d, f"detection {i}") for i, d in enumerate(raw)]
    except DetectionFileError as exc:
        raise WireError(f"schema-invalid response: {exc}") from exc


def _decode_line(line: str) -> object:
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"response is not valid JSON: {exc}") from exc


class StdioAdapterClient:
    """Talks to an adapter subprocess over line-delimited JSON on its stdio."""

    def __init__(self, command: str | Sequence[str], timeout: float | None = None):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self._timeout = timeout
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise AdapterConnectionError(f"cannot start adapter {argv[0]!r}: {exc}") from exc

    def infer(
        self, tile_id: str, png_bytes: bytes, min_confidence: float, max_instances: int
    ) -> list[Detection]:
        request = build_request(tile_id, png_bytes, min_confidence, max_instances)
        if self._proc.poll() is not None:
            raise AdapterConnectionError(f"adapter exited with code {self._proc.returncode}")
        try:
            self._proc.stdin.write(json.dumps(request) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterConnectionError(f"adapter stdin closed: {exc}") from exc
        if self._timeout is not None:
            ready, _, _ = select.select([self._proc.stdout], [], [], self._timeout)
            if not ready:
                raise AdapterConnectionError(f"adapter response timed out after {self._timeout:g}s")
        line = self._proc.stdout.readline()
        if not line:
            raise AdapterConnectionError("adapter closed its stdout")
        return parse_response(_decode_line(line), tile_id)

    def close(self) -> None:
        if self._proc.stdin and not self._proc.stdin.closed:
            self._proc.stdin.close()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self) -> StdioAdapterClient:
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


class HttpAdapterClient:
    """Talks to an adapter serving POST /infer."""

    def __init__(self, url: str, timeout: float | None = 60.0):
        url = url.rstrip("/")
        if not url.endswith("/infer"):
            url = url + "/infer"
        self._url = url
        self._timeout = timeout

    def infer(
        self, tile_id: str, png_bytes: bytes, min_confidence: float, max_instances: int
    ) -> list[Detection]:
        body = json.dumps(build_request(tile_id, png_bytes, min_confidence, max_instances)).encode()
        request = urllib.request.Request(
            self._url, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(request, timeout=self._timeout) as response:
                payload = response.read().decode("utf-8")
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode("utf-8", "replace")[:200]
            raise WireError(f"adapter returned HTTP {exc.code}: {detail}") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise AdapterConnectionError(f"cannot reach adapter at {self._url}: {exc}") from exc
        return parse_response(_decode_line(payload), tile_id)

    def close(self) -> None:
        pass

    def __enter__(self) -> HttpAdapterClient:
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()
