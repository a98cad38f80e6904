"""Inference server/client boundary: wire format, timed client, backends.

Transport is HTTP/1.1 with JSON bodies and base64-PNG images.  Messages are
versioned ("v1"); unknown extra fields are ignored for forward
compatibility, missing required fields are rejected.  Two reference
backends are provided: fixture replay (stands in for the trained model) and
a rule-based detector wrapper.
"""

from __future__ import annotations

import base64
import json
import random
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import requests

from .core import BBox, Category, Detection, FlakescanError, Polygon, Rle
from .ruledet import RuleParams, detect_rule_based

PROTOCOL_VERSION = "v1"
SUPPORTED_VERSIONS = ("v1",)
DEFAULT_TIMEOUT_MS = 2000.0
DEFAULT_RETRIES = 2


class ProtocolError(FlakescanError):
    pass


class UnsupportedVersionError(ProtocolError):
    pass


class TransportError(ProtocolError):
    def __init__(self, message: str, attempts: Optional[list] = None):
        super().__init__(message)
        self.attempts = attempts or []


class RequestError(ProtocolError):
    """Server rejected the request (4xx); not retried."""


@dataclass(frozen=True)
class InferRequest:
    chip_id: str
    tile_id: str
    image: np.ndarray  # HxWx3 uint8
    model: str = "replay"
    version: str = PROTOCOL_VERSION

    def __post_init__(self):
        if not self.chip_id or not self.tile_id:
            raise ProtocolError("chip_id and tile_id must be nonempty")


@dataclass(frozen=True)
class InferResponse:
    detections: Tuple[Detection, ...]
    timing_ms: float
    model: str
    version: str = PROTOCOL_VERSION


def encode_image(image: np.ndarray) -> str:
    ok, buf = cv2.imencode(".png", image[:, :, ::-1])  # RGB -> BGR for PNG
    if not ok:
        raise ProtocolError("PNG encoding failed")
    return base64.b64encode(buf.tobytes()).decode("ascii")


def decode_image(b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
    except Exception as e:
        raise ProtocolError(f"invalid base64 image payload: {e}") from e
    img = cv2.imdecode(np.frombuffer(raw, dtype=np.uint8), cv2.IMREAD_COLOR)
    if img is None:
        raise ProtocolError("image payload is not a decodable PNG")
    return img[:, :, ::-1].copy()  # BGR -> RGB


def detection_to_wire(det: Detection) -> dict:
    d = {
        "material": det.category.material.value,
        "thickness": det.category.thickness.value,
        "score": det.score,
        "bbox": det.bbox.as_list(),
    }
    if det.mask_polygon is not None:
        d["mask"] = {"type": "polygon", "points": [list(xy) for xy in det.mask_polygon.vertices]}
    else:
        d["mask"] = {
            "type": "rle",
            "width": det.mask_rle.width,
            "height": det.mask_rle.height,
            "counts": list(det.mask_rle.counts),
        }
    return d


def detection_from_wire(d: dict) -> Detection:
    try:
        cat = Category.from_name(f"{d['material']}_{d['thickness']}")
        bbox = BBox(*d["bbox"])
        mask = d["mask"]
        if mask["type"] == "polygon":
            return Detection(cat, float(d["score"]), bbox, mask_polygon=Polygon(mask["points"]))
        if mask["type"] == "rle":
            return Detection(
                cat,
                float(d["score"]),
                bbox,
                mask_rle=Rle(mask["width"], mask["height"], tuple(mask["counts"])),
            )
        raise ProtocolError(f"unknown mask type {mask['type']!r}")
    except (KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"malformed detection: {e}") from e


def encode_request(req: InferRequest) -> bytes:
    body = {
        "version": req.version,
        "chip_id": req.chip_id,
        "tile_id": req.tile_id,
        "model": req.model,
        "image_b64": encode_image(req.image),
    }
    return json.dumps(body).encode()


def decode_request(data: bytes) -> InferRequest:
    body = _load_json(data)
    _check_version(body)
    for key in ("chip_id", "tile_id", "image_b64"):
        if key not in body:
            raise ProtocolError(f"missing required field {key!r}")
    return InferRequest(
        chip_id=body["chip_id"],
        tile_id=body["tile_id"],
        image=decode_image(body["image_b64"]),
        model=body.get("model", "replay"),
        version=body["version"],
    )


def encode_response(resp: InferResponse) -> bytes:
    body = {
        "version": resp.version,
        "model": resp.model,
        "timing_ms": resp.timing_ms,
        "detections": [detection_to_wire(d) for d in resp.detections],
    }
    return json.dumps(body).encode()


def decode_response(data: bytes) -> InferResponse:
    body = _load_json(data)
    _check_version(body)
    for key in ("model", "timing_ms", "detections"):
        if key not in body:
            raise ProtocolError(f"missing required field {key!r}")
    dets = tuple(detection_from_wire(d) for d in body["detections"])
    return InferResponse(dets, float(body["timing_ms"]), body["model"], body["version"])


def _load_json(data: bytes) -> dict:
    try:
        return json.loads(data)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"malformed body at position {e.pos}: {e.msg}") from e


def _check_version(body: dict) -> None:
    version = body.get("version")
    if version is None:
        raise ProtocolError("missing required field 'version'")
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedVersionError(f"unsupported protocol version {version!r}")


# --- client -------------------------------------------------------------------

def client_infer(
    endpoint: str,
    req: InferRequest,
    timeout_ms: float = DEFAULT_TIMEOUT_MS,
    retries: int = DEFAULT_RETRIES,
    backoff_ms: float = 50.0,
    rng: Optional[random.Random] = None,
) -> Tuple[InferResponse, float]:
    """POST to /v1/infer measuring wall-clock round trip.

    Timeouts and 5xx responses retry up to `retries` extra attempts with
    jittered backoff; 4xx responses raise immediately.  Returns (response,
    round-trip ms).
    """
    rng = rng or random.Random()
    url = endpoint.rstrip("/") + "/v1/infer"
    body = encode_request(req)
    attempts = []
    t0 = time.monotonic()
    for attempt in range(retries + 1):
        try:
            r = requests.post(
                url,
                data=body,
                headers={"Content-Type": "application/json"},
                timeout=timeout_ms / 1000.0,
            )
            if 400 <= r.status_code < 500:
                raise RequestError(f"server rejected request: {r.status_code} {r.text[:200]}")
            if r.status_code >= 500:
                attempts.append(f"attempt {attempt + 1}: HTTP {r.status_code}")
            else:
                resp = decode_response(r.content)
                elapsed_ms = (time.monotonic() - t0) * 1000.0
                return resp, elapsed_ms
        except (requests.ConnectionError, requests.Timeout) as e:
            attempts.append(f"attempt {attempt + 1}: {type(e).__name__}")
        if attempt < retries:
            time.sleep((backoff_ms / 1000.0) * (1 + rng.random()) * (attempt + 1))
    raise TransportError(
        f"inference failed after {retries + 1} attempts to {url}", attempts
    )


def check_health(endpoint: str, timeout_ms: float = DEFAULT_TIMEOUT_MS) -> dict:
    r = requests.get(endpoint.rstrip("/") + "/v1/health", timeout=timeout_ms / 1000.0)
    r.raise_for_status()
    return r.json()


# --- server backends ----------------------------------------------------------

class InferBackend:
    """Detection callback plus identity for /v1/models."""

    model_tag = "base"

    def infer(self, req: InferRequest) -> List[Detection]:  # pragma: no cover
        raise NotImplementedError


class ReplayBackend(InferBackend):
    """Returns fixture detections for known tile ids, empty otherwise.

    Output is independent of image content, mirroring a detector that is
    robust to illumination changes.
    """

    model_tag = "replay"

    def __init__(self, fixture: Dict[str, Sequence[Detection]], latency_ms: float = 0.0):
        self.fixture = {k: tuple(v) for k, v in fixture.items()}
        self.latency_ms = latency_ms

    def infer(self, req: InferRequest) -> List[Detection]:
        if self.latency_ms:
            time.sleep(self.latency_ms / 1000.0)
        return list(self.fixture.get(req.tile_id, ()))


class RuleBackend(InferBackend):
    model_tag = "ruledet"

    def __init__(self, params: RuleParams):
        self.params = params

    def infer(self, req: InferRequest) -> List[Detection]:
        return detect_rule_based(req.image, self.params)


class _Handler(BaseHTTPRequestHandler):
    backend: InferBackend = None  # set by server factory

    def log_message(self, *args):  # quiet
        pass

    def _send(self, code: int, payload: dict | bytes):
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        if self.path == "/v1/health":
            self._send(200, {"status": "ok", "models": [self.backend.model_tag]})
        elif self.path == "/v1/models":
            self._send(
                200,
                {"models": [{"tag": self.backend.model_tag, "max_side": 1024}]},
            )
        else:
            self._send(404, {"error": "not found"})

    def do_POST(self):
        if self.path != "/v1/infer":
            self._send(404, {"error": "not found"})
            return
        length = int(self.headers.get("Content-Length", 0))
        data = self.rfile.read(length)
        try:
            req = decode_request(data)
        except ProtocolError as e:
            self._send(400, {"error": str(e)})
            return
        t0 = time.monotonic()
        dets = self.backend.infer(req)
        timing_ms = (time.monotonic() - t0) * 1000.0
        resp = InferResponse(tuple(dets), timing_ms, self.backend.model_tag)
        self._send(200, encode_response(resp))


class InferenceServer:
    """Threaded HTTP server wrapping a backend; start/stop for tests and
    the CLI."""

    def __init__(self, backend: InferBackend, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"backend": backend})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.backend = backend
        self._thread: Optional[threading.Thread] = None

    @property
    def endpoint(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "InferenceServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
