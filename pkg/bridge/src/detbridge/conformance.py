"""Protocol conformance suite runnable against any wire-protocol server.

Drives the server with valid, malformed, batch, and oversized requests and
checks every reply against the message schema. Failures are report
entries, not exceptions.
"""

from __future__ import annotations

import base64
import io
import json
import subprocess
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from PIL import Image as _PILImage

PROTOCOL_VERSION = 1
TIMEOUT = 30.0


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ConformanceReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = ""):
        self.checks.append(CheckResult(name, passed, detail))

    def summary(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'} {c.name}"
                 + (f" ({c.detail})" if c.detail and not c.passed else "")
                 for c in self.checks]
        lines.append(f"{sum(c.passed for c in self.checks)}/{len(self.checks)} passed")
        return "\n".join(lines)


def fixture_image(size: int = 96) -> np.ndarray:
    arr = np.full((size, size, 3), 28 / 255.0)
    arr[32:64, 32:64] = np.array([200, 60, 40]) / 255.0
    return arr


def png_b64(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    _PILImage.fromarray(np.rint(arr * 255).astype(np.uint8), "RGB").save(buf, "PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class _StdioDriver:
    def __init__(self, command: Sequence[str]):
        self.proc = subprocess.Popen(list(command), stdin=subprocess.PIPE,
                                     stdout=subprocess.PIPE, text=True, bufsize=1)

    def send_line(self, line: str) -> dict | None:
        assert self.proc.stdin and self.proc.stdout
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        reply = self.proc.stdout.readline()
        return json.loads(reply) if reply else None

    def request(self, message: dict) -> dict | None:
        return self.send_line(json.dumps(message))

    def shutdown(self) -> int | None:
        try:
            assert self.proc.stdin
            self.proc.stdin.write(json.dumps({"op": "shutdown"}) + "\n")
            self.proc.stdin.flush()
            return self.proc.wait(timeout=10)
        except Exception:
            self.proc.kill()
            return None


class _HttpDriver:
    def __init__(self, base_url: str):
        import requests

        self._requests = requests
        self.base_url = base_url.rstrip("/")

    def request(self, message: dict) -> dict | None:
        resp = self._requests.post(f"{self.base_url}/v1/{message['op']}",
                                   json=message, timeout=TIMEOUT)
        return resp.json()

    def send_line(self, line: str) -> dict | None:
        # raw malformed bodies only make sense for the detect endpoint
        resp = self._requests.post(f"{self.base_url}/v1/detect", data=line,
                                   headers={"Content-Type": "application/json"},
                                   timeout=TIMEOUT)
        return resp.json()

    def shutdown(self):
        try:
            self._requests.post(f"{self.base_url}/v1/shutdown",
                                json={"op": "shutdown"}, timeout=TIMEOUT)
        except Exception:
            pass
        return 0


def _valid_detection(obj) -> bool:
    return (isinstance(obj, dict)
            and isinstance(obj.get("bbox"), list) and len(obj["bbox"]) == 4
            and all(isinstance(v, (int, float)) for v in obj["bbox"])
            and isinstance(obj.get("class_id"), int)
            and isinstance(obj.get("class_scores"), dict)
            and all(isinstance(v, (int, float)) and 0 <= v <= 1
                    for v in obj["class_scores"].values()))


def conformance_suite(server_locator) -> ConformanceReport:
    """Run the fixture checks against a server.

    ``server_locator``: a command list (stdio server) or an http(s) URL.
    """
    if isinstance(server_locator, str) and server_locator.startswith("http"):
        driver = _HttpDriver(server_locator)
    else:
        driver = _StdioDriver(server_locator)
    report = ConformanceReport()
    image_b64 = png_b64(fixture_image())

    try:
        hello = driver.request({"op": "hello", "protocol": PROTOCOL_VERSION})
        ok = (isinstance(hello, dict) and hello.get("op") == "hello"
              and hello.get("protocol") == PROTOCOL_VERSION
              and isinstance(hello.get("classes"), list)
              and isinstance(hello.get("max_batch"), int)
              and isinstance(hello.get("concurrent_safe"), bool))
        report.add("hello handshake", ok, f"got {hello!r}" if not ok else "")
        max_batch = hello.get("max_batch", 1) if isinstance(hello, dict) else 1

        reply = driver.request({"op": "detect", "id": 1,
                                "images": [{"png_b64": image_b64}]})
        ok = (isinstance(reply, dict) and reply.get("op") == "detections"
              and reply.get("id") == 1 and isinstance(reply.get("results"), list)
              and len(reply["results"]) == 1
              and all(_valid_detection(d) for d in reply["results"][0]))
        report.add("single detect", ok, f"got {reply!r}" if not ok else "")
        single = reply["results"][0] if ok else None

        batch_n = min(3, max_batch)
        reply = driver.request({"op": "detect", "id": 2,
                                "images": [{"png_b64": image_b64}] * batch_n})
        ok = (isinstance(reply, dict) and reply.get("op") == "detections"
              and reply.get("id") == 2
              and isinstance(reply.get("results"), list)
              and len(reply["results"]) == batch_n)
        report.add("valid batch", ok, f"got {reply!r}" if not ok else "")
        if ok and single is not None:
            report.add("batch matches single", all(r == single for r in reply["results"]),
                       "batch entries differ from the single-image result")

        reply = driver.request({"op": "detect", "id": 3,
                                "images": [{"png_b64": image_b64}]})
        report.add("deterministic repeat",
                   isinstance(reply, dict) and reply.get("results") == [single],
                   "same image twice gave different detections")

        reply = driver.send_line("this is not json")
        ok = isinstance(reply, dict) and reply.get("op") == "error"
        report.add("malformed JSON gets error reply", ok,
                   f"got {reply!r}" if not ok else "")
        reply = driver.request({"op": "detect", "id": 4,
                                "images": [{"png_b64": image_b64}]})
        report.add("connection survives malformed request",
                   isinstance(reply, dict) and reply.get("op") == "detections",
                   "server died or answered garbage after the malformed line")

        reply = driver.request({"op": "detect", "id": 5})
        ok = (isinstance(reply, dict) and reply.get("op") == "error"
              and reply.get("id") == 5)
        report.add("missing images field gets error with id", ok,
                   f"got {reply!r}" if not ok else "")

        reply = driver.request({"op": "detect", "id": 6,
                                "images": [{"png_b64": image_b64}] * (max_batch + 1)})
        ok = (isinstance(reply, dict) and reply.get("op") == "error"
              and reply.get("id") == 6
              and "batch" in str(reply.get("message", "")).lower())
        report.add("oversized batch rejected with sized error", ok,
                   f"got {reply!r}" if not ok else "")
    finally:
        code = driver.shutdown()
    if isinstance(driver, _StdioDriver):
        report.add("clean shutdown", code == 0, f"exit code {code!r}")
    return report
