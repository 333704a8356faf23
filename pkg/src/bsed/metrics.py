"""Benchmark metrics (pointing energy, deletion/insertion curves) and
axiom metrics (dummy, efficiency, linearity harness).

Deletion/insertion and the dummy metric re-query the detector; curve
evaluation batches its step images through the backend the same way the
engine does. Pixel orderings break ties by row-major index so that
patch-constant maps stay deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AttributionMap, BBox, Image, TargetDetection, pixel_slice
from .engine import EngineConfig, bsed_attribution
from .scoring import ScoreSpec, score_detections


@dataclass(frozen=True)
class CurveResult:
    """Score as a function of the fraction of pixels removed or added."""

    fractions: np.ndarray
    scores: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fractions.tolist(), self.scores.tolist()))


@dataclass(frozen=True)
class DummyTrial:
    cell_row: int
    cell_col: int
    delta_score: float
    patch_mean_attr: float


@dataclass(frozen=True)
class DummyReport:
    """Mean |patch attribution| over patches whose masking barely moves
    the score. ``value`` is None when no trial qualifies."""

    trials: tuple[DummyTrial, ...]
    sigma: float
    qualifying: int
    value: float | None


def epg(amap: AttributionMap, bbox: BBox) -> float:
    """Fraction of min-max normalized attribution inside the box.

    The box is clamped to the image; a constant map normalizes to uniform,
    giving the box's pixel fraction.
    """
    height, width = amap.height, amap.width
    i0, i1, j0, j1 = pixel_slice(bbox, height, width)
    inside = max(0, i1 - i0) * max(0, j1 - j0)
    v = amap.values
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return inside / (height * width)
    norm = (v - lo) / (hi - lo)
    return float(norm[i0:i1, j0:j1].sum()) / float(norm.sum())


def _descending_order(values: np.ndarray) -> np.ndarray:
    flat = values.ravel()
    return np.argsort(-flat, kind="stable")


def _batched_scores(backend, spec: ScoreSpec, pixel_stacks: list[np.ndarray]) -> list[float]:
    scores: list[float] = []
    batch = max(1, backend.capabilities.max_batch)
    for start in range(0, len(pixel_stacks), batch):
        chunk = [Image(px) for px in pixel_stacks[start:start + batch]]
        for dets in backend.detect_batch(chunk):
            scores.append(score_detections(spec, dets))
    return scores


def _curve(amap: AttributionMap, image: Image, backend, spec: ScoreSpec,
           steps: int, insertion: bool) -> CurveResult:
    if steps < 2:
        raise ValueError("steps must be >= 2")
    order = _descending_order(amap.values)
    n_pixels = order.size
    fractions = np.linspace(0.0, 1.0, steps + 1)
    counts = np.rint(fractions * n_pixels).astype(int)
    flat_src = image.pixels.reshape(n_pixels, 3)
    work = np.zeros_like(flat_src) if insertion else flat_src.copy()
    stacks = []
    prev = 0
    for count in counts:
        sel = order[prev:count]
        if insertion:
            work[sel] = flat_src[sel]
        else:
            work[sel] = 0.0
        prev = count
        stacks.append(work.reshape(image.height, image.width, 3).copy())
    scores = np.array(_batched_scores(backend, spec, stacks))
    auc = float(np.trapezoid(scores, fractions))
    return CurveResult(fractions=fractions, scores=scores, auc=auc)


def deletion_curve(amap: AttributionMap, image: Image, backend, spec: ScoreSpec,
                   steps: int = 100) -> CurveResult:
    """Mask pixels to black in descending attribution order; lower AUC is better."""
    return _curve(amap, image, backend, spec, steps, insertion=False)


def insertion_curve(amap: AttributionMap, image: Image, backend, spec: ScoreSpec,
                    steps: int = 100) -> CurveResult:
    """Reveal pixels over black in descending attribution order; higher AUC is better."""
    return _curve(amap, image, backend, spec, steps, insertion=True)


def dummy_metric(amap: AttributionMap, image: Image, backend, spec: ScoreSpec,
                 sigma: float = 0.005, trials: int = 100, rng=0,
                 patch_edge: int | None = None) -> DummyReport:
    """Check that score-inert patches carry (near-)zero attribution.

    Each trial blacks out one randomly chosen grid patch; the patch
    qualifies as a dummy when |score change| < sigma, and the metric is
    the mean |mean patch attribution| over qualifying patches.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if patch_edge is None:
        patch_edge = getattr(amap.config, "patch_edge", 32)
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    height, width = image.height, image.width
    grid_h = -(-height // patch_edge)
    grid_w = -(-width // patch_edge)
    rows = gen.integers(0, grid_h, size=trials)
    cols = gen.integers(0, grid_w, size=trials)

    base_score = score_detections(spec, backend.detect(image))
    stacks = []
    for r, c in zip(rows, cols):
        px = image.pixels.copy()
        px[r * patch_edge:(r + 1) * patch_edge, c * patch_edge:(c + 1) * patch_edge, :] = 0.0
        stacks.append(px)
    masked_scores = _batched_scores(backend, spec, stacks)

    out_trials = []
    qualifying_abs = []
    for idx in range(trials):
        r, c = int(rows[idx]), int(cols[idx])
        delta = base_score - masked_scores[idx]
        patch = amap.values[r * patch_edge:(r + 1) * patch_edge,
                            c * patch_edge:(c + 1) * patch_edge]
        mean_attr = float(patch.mean())
        out_trials.append(DummyTrial(cell_row=r, cell_col=c, delta_score=float(delta),
                                     patch_mean_attr=mean_attr))
        if abs(delta) < sigma:
            qualifying_abs.append(abs(mean_attr))
    value = float(np.mean(qualifying_abs)) if qualifying_abs else None
    return DummyReport(trials=tuple(out_trials), sigma=sigma,
                       qualifying=len(qualifying_abs), value=value)


def efficiency_metric(amap: AttributionMap, full_score: float,
                      baseline_score: float = 0.0, mode: str = "plain") -> float:
    """Gap between the attribution sum and the score it should account for.

    ``plain`` compares against the full-image score alone; ``axiom``
    compares against full minus baseline. With a black baseline that
    detects nothing the two coincide.
    """
    total = float(amap.values.sum())
    if mode == "plain":
        return abs(total - full_score)
    if mode == "axiom":
        return abs(total - (full_score - baseline_score))
    raise ValueError(f"unknown efficiency mode {mode!r}")


@dataclass(frozen=True)
class LinearityResult:
    additive_map: AttributionMap
    loc_map: AttributionMap
    cls_map: AttributionMap
    max_residual: float


def linearity_harness(image: Image, target: TargetDetection, backend,
                      config: EngineConfig, workers: int = 1) -> LinearityResult:
    """Three shared-seed runs: additive score vs its two components.

    The estimator is linear in the score, so with identical mask
    sequences the additive map must equal the sum of the component maps
    up to float-summation residue.
    """
    maps = {}
    for combine in ("additive", "loc_only", "cls_only"):
        spec = ScoreSpec(target=target, combine=combine)
        maps[combine] = bsed_attribution(image, target, backend, spec, config,
                                         workers=workers)
    residual = maps["additive"].values - (maps["loc_only"].values + maps["cls_only"].values)
    return LinearityResult(
        additive_map=maps["additive"],
        loc_map=maps["loc_only"],
        cls_map=maps["cls_only"],
        max_residual=float(np.abs(residual).max()),
    )
