import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsed.core import Image
from bsed.engine import EngineConfig, bsed_attribution
from bsed.mapfile import map_to_bytes
from bsed.remote import (BackendTimeout, RemoteBackend, SchemaViolation,
                         decode_image_png_b64, encode_image_png_b64, parse_detection)

STUB = str(Path(__file__).parent / "stub_server.py")


def spawn(*extra, timeout=30.0):
    return RemoteBackend.from_command([sys.executable, STUB, *extra], timeout=timeout)


class TestHandshake:
    def test_capabilities(self):
        backend = spawn("--max-batch", "9")
        try:
            caps = backend.capabilities
            assert caps.max_batch == 9
            assert caps.concurrent_safe is False
            assert caps.class_names == ("thing", "other")
        finally:
            backend.close()

    def test_clean_shutdown(self):
        backend = spawn()
        backend.close()
        assert backend._transport._proc.returncode == 0


class TestDetect:
    def test_matches_local_synthetic(self, single_scene):
        backend = spawn()
        try:
            remote_dets = backend.detect(single_scene.image)
        finally:
            backend.close()
        local_dets = single_scene.backend.detect(single_scene.image)
        assert remote_dets == local_dets

    def test_batch_matches_singles(self, single_scene):
        backend = spawn("--max-batch", "2")
        rng = np.random.default_rng(3)
        images = []
        for _ in range(5):  # forces chunking at max_batch=2
            mask = (rng.random((64, 64)) < 0.5).astype(np.float64)
            images.append(Image(single_scene.image.pixels * mask[:, :, None]))
        try:
            batched = backend.detect_batch(images)
            singles = [backend.detect(im) for im in images]
        finally:
            backend.close()
        assert batched == singles

    def test_missing_bbox_is_schema_violation(self, single_scene):
        backend = spawn("--fault", "missing-bbox")
        try:
            with pytest.raises(SchemaViolation):
                backend.detect(single_scene.image)
        finally:
            backend.close()

    def test_bad_json_is_schema_violation(self, single_scene):
        backend = spawn("--fault", "bad-json")
        try:
            with pytest.raises(SchemaViolation):
                backend.detect(single_scene.image)
        finally:
            backend.close()

    def test_wrong_id_times_out(self, single_scene):
        backend = spawn("--fault", "wrong-id", timeout=1.5)
        try:
            with pytest.raises(BackendTimeout):
                backend.detect(single_scene.image)
        finally:
            backend.close()


class TestPngCodec:
    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_roundtrip_exact_for_8bit_sources(self, seed):
        rng = np.random.default_rng(seed)
        arr = rng.integers(0, 256, size=(6, 5, 3)).astype(np.float64) / 255.0
        image = Image(arr)
        again = decode_image_png_b64(encode_image_png_b64(image))
        np.testing.assert_array_equal(again.pixels, arr)

    def test_parse_detection_rejects_bad_fields(self):
        with pytest.raises(SchemaViolation):
            parse_detection({"class_id": 0, "class_scores": {"0": 0.5}})
        with pytest.raises(SchemaViolation):
            parse_detection({"bbox": [0, 0, 1], "class_id": 0, "class_scores": {"0": 0.5}})
        with pytest.raises(SchemaViolation):
            parse_detection({"bbox": [0, 0, 1, 1], "class_id": 0,
                             "class_scores": {"0": 1.7}})


class TestInterchangeability:
    def test_engine_map_bytes_equal_over_wire(self, single_scene):
        """Identical detection lists must give identical maps: the engine
        output depends on the backend only through what it returns."""
        cfg = EngineConfig(layers=1, masks_per_layer=64, patch_edge=16, seed=21)
        sc = single_scene
        local = bsed_attribution(sc.image, sc.target, sc.backend, sc.spec(), cfg)
        backend = spawn()
        try:
            remote = bsed_attribution(sc.image, sc.target, backend, sc.spec(), cfg)
        finally:
            backend.close()
        assert map_to_bytes(local) == map_to_bytes(remote)
