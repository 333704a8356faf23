import socket
import subprocess
import sys
import time

import pytest

from detbridge.conformance import conformance_suite

SERVE_CMD = [sys.executable, "-m", "detbridge", "serve", "--model", "tiny",
             "--max-batch", "4"]


class TestConformanceStdio:
    def test_bridge_passes_full_suite(self):
        report = conformance_suite(SERVE_CMD)
        assert report.passed, "\n" + report.summary()
        names = [c.name for c in report.checks]
        assert "hello handshake" in names
        assert "oversized batch rejected with sized error" in names
        assert "clean shutdown" in names


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class TestConformanceHttp:
    def test_bridge_passes_over_http(self):
        port = free_port()
        proc = subprocess.Popen(
            SERVE_CMD + ["--transport", "http", "--port", str(port)],
            stderr=subprocess.PIPE, text=True)
        try:
            assert proc.stderr.readline().startswith("serving on ")
            report = conformance_suite(f"http://127.0.0.1:{port}")
            assert report.passed, "\n" + report.summary()
        finally:
            if proc.poll() is None:
                time.sleep(0.1)
                proc.kill()


class TestConformanceCli:
    def test_cli_reports_pass(self):
        proc = subprocess.run(
            [sys.executable, "-m", "detbridge", "conformance", *SERVE_CMD],
            capture_output=True, text=True, timeout=120)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert "passed" in proc.stdout
