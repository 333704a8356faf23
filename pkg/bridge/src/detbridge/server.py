"""Wire-protocol v1 server: hello / detect / shutdown.

Transport is newline-delimited JSON over stdio (default) or the same
bodies POSTed to /v1/<op>. Malformed requests get an error reply carrying
the offending id; the connection stays up.
"""

from __future__ import annotations

import base64
import io
import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image as _PILImage

from .config import BridgeConfig
from .models import load_model

PROTOCOL_VERSION = 1


def decode_png_b64(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    with _PILImage.open(io.BytesIO(raw)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


class RequestError(Exception):
    def __init__(self, message: str, request_id=None):
        super().__init__(message)
        self.request_id = request_id


class BridgeServer:
    """Protocol handler around one loaded model; one batch at a time."""

    def __init__(self, config: BridgeConfig):
        self.config = config
        self.model = load_model(config)

    def hello_reply(self) -> dict:
        return {
            "op": "hello",
            "protocol": PROTOCOL_VERSION,
            "classes": list(self.model.class_names),
            "max_batch": self.config.max_batch,
            "concurrent_safe": False,
            "metadata": {"model": self.config.model,
                         "extraction": self.config.extraction},
        }

    def detect_reply(self, message: dict) -> dict:
        request_id = message.get("id")
        if not isinstance(request_id, int):
            raise RequestError("detect needs an integer id", request_id)
        images = message.get("images")
        if not isinstance(images, list) or not images:
            raise RequestError("detect needs a non-empty images list", request_id)
        if len(images) > self.config.max_batch:
            raise RequestError(
                f"batch size {len(images)} exceeds max_batch {self.config.max_batch}",
                request_id)
        arrays = []
        for entry in images:
            if not isinstance(entry, dict) or "png_b64" not in entry:
                raise RequestError("each image needs a png_b64 field", request_id)
            try:
                arrays.append(decode_png_b64(entry["png_b64"]))
            except Exception as exc:
                raise RequestError(f"cannot decode image: {exc}", request_id) from exc
        results = self.model.detect_batch(arrays)
        return {"op": "detections", "id": request_id, "results": results}

    def handle(self, message) -> dict | None:
        """Reply for one message; None means shutdown."""
        if not isinstance(message, dict) or "op" not in message:
            return {"op": "error", "id": None, "message": "message needs an op"}
        op = message["op"]
        try:
            if op == "hello":
                if message.get("protocol") != PROTOCOL_VERSION:
                    raise RequestError(
                        f"unsupported protocol {message.get('protocol')!r}")
                return self.hello_reply()
            if op == "detect":
                return self.detect_reply(message)
            if op == "shutdown":
                return None
            raise RequestError(f"unknown op {op!r}", message.get("id"))
        except RequestError as exc:
            return {"op": "error", "id": exc.request_id, "message": str(exc)}
        except Exception as exc:  # keep the connection up on model failures
            return {"op": "error", "id": message.get("id"),
                    "message": f"{type(exc).__name__}: {exc}"}

    def serve_stdio(self, stdin=None, stdout=None) -> int:
        stdin = stdin if stdin is not None else sys.stdin
        stdout = stdout if stdout is not None else sys.stdout
        for line in stdin:
            line = line.strip()
            if not line:
                continue
            try:
                message = json.loads(line)
            except json.JSONDecodeError:
                reply = {"op": "error", "id": None, "message": "request is not JSON"}
            else:
                reply = self.handle(message)
                if reply is None:
                    return 0
            stdout.write(json.dumps(reply) + "\n")
            stdout.flush()
        return 0

    def serve_http(self) -> int:
        server = make_http_server(self)
        host, port = server.server_address[:2]
        print(f"serving on http://{host}:{port}", file=sys.stderr, flush=True)
        try:
            server.serve_forever()
        finally:
            server.server_close()
        return 0


def make_http_server(bridge: BridgeServer) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            if not self.path.startswith("/v1/"):
                self.send_error(404)
                return
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length)
            try:
                message = json.loads(body)
            except json.JSONDecodeError:
                reply = {"op": "error", "id": None, "message": "request is not JSON"}
            else:
                reply = bridge.handle(message)
            if reply is None:  # shutdown
                self._respond({"op": "bye"})
                import threading
                threading.Thread(target=self.server.shutdown, daemon=True).start()
                return
            self._respond(reply)

        def _respond(self, payload: dict):
            data = json.dumps(payload).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    return ThreadingHTTPServer((bridge.config.host, bridge.config.port), Handler)
