"""Detection-correction and feature-comparison workflows.

Masking a pixel here always means setting it to the black baseline. Pixel
orderings are value-sorted with row-major tie-breaking, so traces are
deterministic functions of the maps they are given.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as _PILImage

from .core import AttributionMap, Detection, DimensionMismatch, Image
from .scoring import ScoreSpec, ScoringError, score_detections

DEFAULT_STEP_FRACTION = 0.001
DEFAULT_MAX_FRACTION = 0.2


@dataclass(frozen=True)
class TraceStep:
    masked_count: int
    score_primary: float
    score_rival: float | None
    detections: tuple[Detection, ...]


@dataclass(frozen=True)
class CorrectionTrace:
    steps: tuple[TraceStep, ...]
    pixel_order: np.ndarray
    reason: str
    complete: bool = True

    @property
    def scores(self) -> list[float]:
        return [s.score_primary for s in self.steps]


def _ascending_order(values: np.ndarray) -> np.ndarray:
    return np.argsort(values.ravel(), kind="stable")


def _resolve_step(step: int | None, n_pixels: int) -> int:
    if step is None:
        step = max(1, round(DEFAULT_STEP_FRACTION * n_pixels))
    return max(1, min(step, n_pixels))


def _snapshot(backend, flat_pixels: np.ndarray, shape) -> list[Detection]:
    return backend.detect(Image(flat_pixels.reshape(shape)))


def correct_by_negative_masking(image: Image, amap: AttributionMap, backend,
                                spec: ScoreSpec, step: int | None = None,
                                max_fraction: float = DEFAULT_MAX_FRACTION) -> CorrectionTrace:
    """Mask most-negative pixels first and watch the target score recover.

    Pixels with attribution >= 0 are never masked. The trace starts at the
    unmasked image and stops when negatives are exhausted or the masked
    fraction reaches ``max_fraction``.
    """
    if amap.values.shape != (image.height, image.width):
        raise DimensionMismatch("attribution map does not match the image")
    flat_attr = amap.values.ravel()
    n_pixels = flat_attr.size
    order = _ascending_order(amap.values)
    negatives = order[flat_attr[order] < 0.0]
    step = _resolve_step(step, n_pixels)
    budget = int(max_fraction * n_pixels)

    work = image.pixels.reshape(n_pixels, 3).copy()
    steps = []
    try:
        dets = _snapshot(backend, work, image.pixels.shape)
    except Exception as exc:
        raise ScoringError(f"backend failed on the unmasked image: {exc}") from exc
    steps.append(TraceStep(0, score_detections(spec, dets), None, tuple(dets)))
    if negatives.size == 0:
        return CorrectionTrace(tuple(steps), pixel_order=negatives, reason="no_negative_pixels")

    masked = 0
    reason = "negatives_exhausted"
    complete = True
    while masked < negatives.size:
        if masked >= budget:
            reason = "max_fraction_reached"
            break
        take = min(step, negatives.size - masked, budget - masked)
        sel = negatives[masked:masked + take]
        work[sel] = 0.0
        masked += take
        try:
            dets = _snapshot(backend, work, image.pixels.shape)
        except Exception:
            reason = "backend_failure"
            complete = False
            break
        steps.append(TraceStep(masked, score_detections(spec, dets), None, tuple(dets)))
    return CorrectionTrace(tuple(steps), pixel_order=negatives[:masked],
                           reason=reason, complete=complete)


def flip_true_detection(image: Image, amap_target: AttributionMap,
                        amap_rival: AttributionMap, backend,
                        spec_target: ScoreSpec, spec_rival: ScoreSpec,
                        step: int | None = None,
                        max_fraction: float = DEFAULT_MAX_FRACTION) -> CorrectionTrace:
    """Drive the rival class above the true one by masking in two phases.

    Phase 1 masks pixels the rival map scores negative (most negative
    first), phase 2 masks pixels positive for the target only (largest
    first). Both class scores are recorded at every step.
    """
    if amap_target.values.shape != amap_rival.values.shape:
        raise DimensionMismatch("target and rival maps differ in shape")
    if amap_target.values.shape != (image.height, image.width):
        raise DimensionMismatch("attribution maps do not match the image")
    if spec_target.target.bbox != spec_rival.target.bbox:
        raise ValueError("target and rival specs must share one box")
    if spec_target.target.class_id == spec_rival.target.class_id:
        raise ValueError("target and rival must be different classes")

    tgt = amap_target.values.ravel()
    riv = amap_rival.values.ravel()
    n_pixels = tgt.size
    order_riv = _ascending_order(amap_rival.values)
    phase1 = order_riv[riv[order_riv] < 0.0]
    order_tgt_desc = np.argsort(-tgt, kind="stable")
    target_only = order_tgt_desc[(tgt[order_tgt_desc] > 0.0) & (riv[order_tgt_desc] <= 0.0)]
    plan = np.concatenate([phase1, target_only])
    step = _resolve_step(step, n_pixels)
    budget = int(max_fraction * n_pixels)

    work = image.pixels.reshape(n_pixels, 3).copy()
    steps = []

    def record(masked: int, dets) -> None:
        steps.append(TraceStep(masked, score_detections(spec_target, dets),
                               score_detections(spec_rival, dets), tuple(dets)))

    try:
        record(0, _snapshot(backend, work, image.pixels.shape))
    except Exception as exc:
        raise ScoringError(f"backend failed on the unmasked image: {exc}") from exc
    if target_only.size == 0:
        return CorrectionTrace(tuple(steps), pixel_order=plan, reason="no_distinct_features")

    masked = 0
    reason = "features_exhausted"
    complete = True
    while masked < plan.size:
        if masked >= budget:
            reason = "max_fraction_reached"
            break
        take = min(step, plan.size - masked, budget - masked)
        sel = plan[masked:masked + take]
        work[sel] = 0.0
        masked += take
        try:
            dets = _snapshot(backend, work, image.pixels.shape)
        except Exception:
            reason = "backend_failure"
            complete = False
            break
        record(masked, dets)
    return CorrectionTrace(tuple(steps), pixel_order=plan[:masked],
                           reason=reason, complete=complete)


@dataclass(frozen=True)
class FeatureRegions:
    """Boolean pixel masks partitioning the strictly positive support."""

    common: np.ndarray
    only_first: np.ndarray
    only_second: np.ndarray


def feature_regions(a1: AttributionMap, a2: AttributionMap) -> FeatureRegions:
    """Pixels positive in both maps, in the first only, in the second only.

    Zero counts as neither positive nor negative, so dummy pixels belong
    to no region.
    """
    if a1.values.shape != a2.values.shape:
        raise DimensionMismatch("maps differ in shape")
    pos1 = a1.values > 0.0
    pos2 = a2.values > 0.0
    return FeatureRegions(common=pos1 & pos2, only_first=pos1 & ~pos2,
                          only_second=pos2 & ~pos1)


def region_overlay(image: Image, region: np.ndarray) -> Image:
    """Keep region pixels, black out the rest."""
    if region.shape != (image.height, image.width):
        raise DimensionMismatch("region mask does not match the image")
    return Image(image.pixels * region[:, :, None].astype(np.float64))


def write_region_png(image: Image, region: np.ndarray, path) -> None:
    _PILImage.fromarray(region_overlay(image, region).to_uint8(), mode="RGB").save(path)
