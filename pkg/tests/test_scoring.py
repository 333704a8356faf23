import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsed.core import BBox, Detection, Image, TargetDetection
from bsed.scoring import ScoreSpec, ScoringError, score, score_detections, similarity

TARGET = TargetDetection(bbox=BBox(0, 0, 10, 10), class_id=0)


def det(bbox, class_id=0, cls_score=1.0):
    return Detection(bbox=bbox, class_id=class_id, class_scores={class_id: cls_score})


detections_strategy = st.lists(
    st.builds(
        lambda x, y, dx, dy, cid, s: Detection(
            bbox=BBox(x, y, x + dx, y + dy), class_id=cid,
            class_scores={cid: s, 0: s / 2} if cid != 0 else {cid: s}),
        st.floats(-5, 12), st.floats(-5, 12),
        st.floats(0.5, 12), st.floats(0.5, 12),
        st.integers(0, 3), st.floats(0, 1),
    ),
    min_size=0, max_size=5,
)


class TestSimilarity:
    def test_perfect_match(self):
        spec = ScoreSpec(target=TARGET)
        assert similarity(spec, det(TARGET.bbox)) == 1.0

    def test_disjoint_annihilates(self):
        spec = ScoreSpec(target=TARGET)
        assert similarity(spec, det(BBox(20, 20, 30, 30), cls_score=0.99)) == 0.0

    def test_half_iou_cases(self):
        # iou((0,0,1,1),(0,0,2,1)) = 1/2
        target = TargetDetection(bbox=BBox(0, 0, 1, 1), class_id=0)
        d = det(BBox(0, 0, 2, 1), cls_score=0.8)
        assert similarity(ScoreSpec(target=target), d) == pytest.approx(0.4)
        assert similarity(ScoreSpec(target=target, combine="additive"), d) == pytest.approx(1.3)
        assert similarity(ScoreSpec(target=target, combine="loc_only"), d) == pytest.approx(0.5)
        assert similarity(ScoreSpec(target=target, combine="cls_only"), d) == pytest.approx(0.8)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            ScoreSpec(target=TARGET, combine="cosine")

    @given(detections_strategy)
    @settings(max_examples=80)
    def test_multiplicative_below_additive(self, dets):
        mult = ScoreSpec(target=TARGET, combine="multiplicative")
        add = ScoreSpec(target=TARGET, combine="additive")
        for d in dets:
            assert similarity(mult, d) <= similarity(add, d) + 1e-12


class TestScoreDetections:
    def test_empty_is_zero(self):
        for combine in ("multiplicative", "additive", "loc_only", "cls_only"):
            assert score_detections(ScoreSpec(target=TARGET, combine=combine), []) == 0.0

    def test_max_over_detections(self):
        spec = ScoreSpec(target=TARGET)
        dets = [det(BBox(0, 0, 10, 10), cls_score=0.3),
                det(BBox(0, 0, 10, 10), cls_score=0.9)]
        assert score_detections(spec, dets) == pytest.approx(0.9)

    @given(detections_strategy)
    @settings(max_examples=80)
    def test_component_decomposition_exact(self, dets):
        # the additive score must split exactly into its two components
        f_add = score_detections(ScoreSpec(target=TARGET, combine="additive"), dets)
        f_loc = score_detections(ScoreSpec(target=TARGET, combine="loc_only"), dets)
        f_cls = score_detections(ScoreSpec(target=TARGET, combine="cls_only"), dets)
        assert f_add == f_loc + f_cls

    def test_black_box_purity(self):
        # identical detection lists give identical scores, whoever made them
        dets = [det(BBox(1, 1, 8, 8), cls_score=0.5)]
        spec = ScoreSpec(target=TARGET)
        assert score_detections(spec, list(dets)) == score_detections(spec, tuple(dets))


class TestScoreThroughBackend:
    def test_synthetic_closed_forms(self, single_scene):
        spec = single_scene.spec()
        full = score(single_scene.backend, single_scene.image, spec)
        assert full == pytest.approx(1.0)
        black = Image(np.zeros_like(single_scene.image.pixels))
        assert score(single_scene.backend, black, spec) == 0.0

    def test_backend_failure_wrapped(self):
        class Broken:
            def detect(self, image):
                raise RuntimeError("boom")

        with pytest.raises(ScoringError) as err:
            score(Broken(), Image(np.zeros((2, 2, 3))), ScoreSpec(target=TARGET),
                  image_id="mask-37")
        assert "mask-37" in str(err.value)
