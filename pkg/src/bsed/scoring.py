"""Detection-similarity scoring of (masked) images against a target.

The score of an image is the best similarity over the detections it
yields: localization (IoU with the target box) combined with the
detector's probability for the target class. The multiplicative combine
is the production score; the additive combine and its two components
exist for the linearity check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import Detection, Image, TargetDetection, iou

COMBINE_MODES = ("multiplicative", "additive", "loc_only", "cls_only")


class ScoringError(RuntimeError):
    """Backend failure surfaced during scoring, tagged with the image id."""

    def __init__(self, message: str, image_id=None):
        super().__init__(message if image_id is None else f"{message} [image {image_id}]")
        self.image_id = image_id


@dataclass(frozen=True)
class ScoreSpec:
    """How detections are scored against the target detection."""

    target: TargetDetection
    combine: str = "multiplicative"

    def __post_init__(self):
        if self.combine not in COMBINE_MODES:
            raise ValueError(f"unknown combine mode {self.combine!r}")

    def with_combine(self, combine: str) -> "ScoreSpec":
        return ScoreSpec(target=self.target, combine=combine)


def similarity(spec: ScoreSpec, det: Detection) -> float:
    """Similarity of one detection to the target under the spec's combine."""
    s_loc = iou(spec.target.bbox, det.bbox)
    s_cls = det.score_for(spec.target.class_id)
    if spec.combine == "multiplicative":
        return s_loc * s_cls
    if spec.combine == "additive":
        return s_loc + s_cls
    if spec.combine == "loc_only":
        return s_loc
    return s_cls


def score_detections(spec: ScoreSpec, detections: Sequence[Detection]) -> float:
    """Best similarity over a detection list; 0.0 for the empty list.

    The component modes (loc_only, cls_only) return their term evaluated at
    the detection that maximizes the *additive* similarity, so that for any
    detection list additive == loc_only + cls_only exactly. Taking an
    independent max per component would break that decomposition whenever
    the argmax detection differs.
    """
    if not detections:
        return 0.0
    if spec.combine in ("multiplicative", "additive"):
        best = similarity(spec, detections[0])
        for det in detections[1:]:
            s = similarity(spec, det)
            if s > best:
                best = s
        return best
    add = spec.with_combine("additive")
    best_det = detections[0]
    best = similarity(add, best_det)
    for det in detections[1:]:
        s = similarity(add, det)
        if s > best:
            best, best_det = s, det
    return similarity(spec, best_det)


def score(detector, image: Image, spec: ScoreSpec, image_id=None) -> float:
    """Score one image through a detector backend."""
    try:
        detections = detector.detect(image)
    except Exception as exc:
        raise ScoringError(f"backend failed: {exc}", image_id=image_id) from exc
    return score_detections(spec, detections)
