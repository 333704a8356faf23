"""Wire-protocol v1 client for out-of-process detector backends.

Messages are newline-delimited UTF-8 JSON over a subprocess's stdio, or
the same bodies POSTed to ``/v1/<op>`` over HTTP. Images travel PNG-
encoded (lossless, so masked pixels survive exactly). The handshake
exchanges protocol version, class names, batch limit, and whether the
server tolerates concurrent requests; unless it does, this client keeps
at most one request in flight.
"""

from __future__ import annotations

import base64
import io
import json
import queue
import subprocess
import threading
from typing import Sequence

import numpy as np
import requests
from PIL import Image as _PILImage

from .backends import BackendCapabilities, DetectorBackend
from .core import BBox, Detection, Image

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0


class ProtocolError(RuntimeError):
    """Base for wire-protocol failures."""

    def __init__(self, message: str, request_id: int | None = None):
        super().__init__(message if request_id is None else f"{message} [request {request_id}]")
        self.request_id = request_id


class TransportError(ProtocolError):
    """The channel to the server broke."""


class BackendTimeout(ProtocolError):
    """No response within the configured deadline."""


class SchemaViolation(ProtocolError):
    """The server answered with a malformed or unexpected message."""


class ServerError(ProtocolError):
    """The server answered with an explicit error message."""


def encode_image_png_b64(image: Image) -> str:
    buf = io.BytesIO()
    _PILImage.fromarray(image.to_uint8(), mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image_png_b64(data: str) -> Image:
    raw = base64.b64decode(data)
    with _PILImage.open(io.BytesIO(raw)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return Image(arr)


def _require(cond: bool, message: str, request_id: int | None = None):
    if not cond:
        raise SchemaViolation(message, request_id=request_id)


def parse_detection(obj, request_id: int | None = None) -> Detection:
    _require(isinstance(obj, dict), f"detection is not an object: {obj!r}", request_id)
    for key in ("bbox", "class_id", "class_scores"):
        _require(key in obj, f"detection missing {key}", request_id)
    box = obj["bbox"]
    _require(isinstance(box, (list, tuple)) and len(box) == 4
             and all(isinstance(v, (int, float)) for v in box),
             f"bad bbox {box!r}", request_id)
    scores = obj["class_scores"]
    _require(isinstance(scores, dict), f"bad class_scores {scores!r}", request_id)
    try:
        return Detection(
            bbox=BBox(*[float(v) for v in box]),
            class_id=int(obj["class_id"]),
            class_scores={int(k): float(v) for k, v in scores.items()},
            objectness=float(obj.get("objectness", 1.0)),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"invalid detection fields: {exc}", request_id) from exc


def parse_detections_reply(reply, request_id: int, n_images: int) -> list[list[Detection]]:
    _require(isinstance(reply, dict), "reply is not an object", request_id)
    if reply.get("op") == "error":
        raise ServerError(str(reply.get("message", "unspecified server error")), request_id)
    _require(reply.get("op") == "detections", f"unexpected op {reply.get('op')!r}", request_id)
    _require(reply.get("id") == request_id,
             f"reply id {reply.get('id')!r} != request id {request_id}", request_id)
    results = reply.get("results")
    _require(isinstance(results, list) and len(results) == n_images,
             f"expected {n_images} result lists, got {results!r}", request_id)
    out = []
    for lst in results:
        _require(isinstance(lst, list), "result entry is not a list", request_id)
        out.append([parse_detection(d, request_id) for d in lst])
    return out


class StdioTransport:
    """One subprocess, one JSON message per line.

    A reader thread routes replies to waiters by message id (hello replies,
    which carry none, go to a dedicated slot), so concurrent requests are
    safe when the server allows them.
    """

    _HELLO_KEY = "hello"

    def __init__(self, command: Sequence[str], timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        try:
            self._proc = subprocess.Popen(
                list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        except OSError as exc:
            raise TransportError(f"cannot start backend command {command!r}: {exc}") from exc
        self._write_lock = threading.Lock()
        self._pending_lock = threading.Lock()
        self._pending: dict[object, queue.Queue] = {}
        self._closed = False
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _route(self, key, payload) -> None:
        with self._pending_lock:
            q = self._pending.get(key)
        if q is not None:
            q.put(payload)

    def _fail_all(self, exc: Exception) -> None:
        with self._pending_lock:
            waiters = list(self._pending.values())
        for q in waiters:
            q.put(exc)

    def _pump(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                message = json.loads(line)
            except json.JSONDecodeError:
                self._fail_all(SchemaViolation(f"reply is not JSON: {line[:200]!r}"))
                continue
            if not isinstance(message, dict):
                self._fail_all(SchemaViolation(f"reply is not an object: {line[:200]!r}"))
                continue
            key = message["id"] if "id" in message else self._HELLO_KEY
            self._route(key, message)
        self._fail_all(TransportError("backend process closed its stdout"))

    def request(self, message: dict, expect_reply: bool = True) -> dict | None:
        key = message.get("id", self._HELLO_KEY)
        slot: queue.Queue | None = None
        if expect_reply:
            slot = queue.Queue()
            with self._pending_lock:
                self._pending[key] = slot
        try:
            with self._write_lock:
                assert self._proc.stdin is not None
                self._proc.stdin.write(json.dumps(message) + "\n")
                self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise TransportError(f"backend process write failed: {exc}",
                                 request_id=message.get("id")) from exc
        if slot is None:
            return None
        try:
            reply = slot.get(timeout=self.timeout)
        except queue.Empty:
            raise BackendTimeout(f"no reply within {self.timeout}s",
                                 request_id=message.get("id")) from None
        finally:
            with self._pending_lock:
                self._pending.pop(key, None)
        if isinstance(reply, Exception):
            raise reply
        return reply

    def close(self):
        if self._closed:
            return
        self._closed = True
        try:
            self.request({"op": "shutdown"}, expect_reply=False)
            if self._proc.stdin is not None:
                self._proc.stdin.close()
            self._proc.wait(timeout=5)
        except Exception:
            self._proc.kill()


class HttpTransport:
    """Same message bodies, POSTed to <base>/v1/<op>."""

    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def request(self, message: dict, expect_reply: bool = True) -> dict | None:
        url = f"{self.base_url}/v1/{message['op']}"
        try:
            resp = requests.post(url, json=message, timeout=self.timeout)
        except requests.Timeout as exc:
            raise BackendTimeout(f"no reply within {self.timeout}s",
                                 request_id=message.get("id")) from exc
        except requests.RequestException as exc:
            raise TransportError(f"HTTP request failed: {exc}",
                                 request_id=message.get("id")) from exc
        if not expect_reply:
            return None
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}",
                                 request_id=message.get("id"))
        try:
            return resp.json()
        except ValueError as exc:
            raise SchemaViolation(f"reply is not JSON: {resp.text[:200]!r}",
                                  request_id=message.get("id")) from exc

    def close(self):
        try:
            self.request({"op": "shutdown"}, expect_reply=False)
        except ProtocolError:
            pass


class RemoteBackend(DetectorBackend):
    """DetectorBackend over a wire transport; handshakes on construction."""

    def __init__(self, transport):
        self._transport = transport
        self._id_lock = threading.Lock()
        self._serial_lock = threading.Lock()
        self._next_id = 0
        reply = transport.request({"op": "hello", "protocol": PROTOCOL_VERSION})
        _require(isinstance(reply, dict) and reply.get("op") == "hello", "bad hello reply")
        _require(reply.get("protocol") == PROTOCOL_VERSION,
                 f"protocol mismatch: server speaks {reply.get('protocol')!r}")
        classes = reply.get("classes")
        _require(isinstance(classes, list) and all(isinstance(c, str) for c in classes),
                 "hello reply missing class list")
        max_batch = reply.get("max_batch")
        _require(isinstance(max_batch, int) and max_batch >= 1, "bad max_batch in hello")
        concurrent = reply.get("concurrent_safe")
        _require(isinstance(concurrent, bool), "bad concurrent_safe in hello")
        self.capabilities = BackendCapabilities(
            max_batch=max_batch, concurrent_safe=concurrent, class_names=tuple(classes))

    @classmethod
    def from_command(cls, command: Sequence[str], timeout: float = DEFAULT_TIMEOUT):
        return cls(StdioTransport(command, timeout=timeout))

    @classmethod
    def from_url(cls, base_url: str, timeout: float = DEFAULT_TIMEOUT):
        return cls(HttpTransport(base_url, timeout=timeout))

    def _detect_chunk(self, images: Sequence[Image]) -> list[list[Detection]]:
        with self._id_lock:
            request_id = self._next_id
            self._next_id += 1
        message = {
            "op": "detect",
            "id": request_id,
            "images": [{"png_b64": encode_image_png_b64(im)} for im in images],
        }
        if self.capabilities.concurrent_safe:
            reply = self._transport.request(message)
        else:
            with self._serial_lock:
                reply = self._transport.request(message)
        return parse_detections_reply(reply, request_id, len(images))

    def detect(self, image: Image) -> list[Detection]:
        return self._detect_chunk([image])[0]

    def detect_batch(self, images: Sequence[Image]) -> list[list[Detection]]:
        out: list[list[Detection]] = []
        limit = self.capabilities.max_batch
        for start in range(0, len(images), limit):
            out.extend(self._detect_chunk(images[start:start + limit]))
        return out

    def close(self):
        self._transport.close()
