"""The production attribution estimator and the weighted-mask baseline.

Per layer k of K, masks keep each grid cell with probability k/(K+1);
every masked image is scored against the target, and the layer's map is
the empirical covariance of score and per-pixel mask value, divided by
mean(M) (1 - mean(M)) and by the pixel count of the owning patch. The
final map averages the layers.

Determinism contract: for a fixed (config, seed) the output bytes are
identical regardless of worker count. Mask grids are regenerated from
counter-based substreams, batch boundaries depend only on the backend's
max_batch, and all reductions run sequentially in mask-index order with
compensated summation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from threading import Lock
from time import perf_counter
from typing import Callable

import numpy as np

from .core import AttributionMap, Image, TargetDetection
from .masking import (bernoulli_cells, expand_cells, expand_cells_batch, grid_shape,
                      layer_probability, patch_pixel_counts, rng_stream)
from .scoring import ScoreSpec, ScoringError, score_detections

PROGRESS_EVERY = 1000

# grid_provider(layer, index) -> (h, w) binary cell array; overrides the
# seeded Bernoulli stream (test injection hook).
GridProvider = Callable[[int, int], np.ndarray]
ProgressFn = Callable[[int, int, int, float], None]


@dataclass(frozen=True)
class EngineConfig:
    """Sampling knobs for the estimator.

    ``masks_per_layer`` counts masks drawn *per layer*; the total inference
    count is layers * masks_per_layer.
    """

    layers: int = 4
    masks_per_layer: int = 6000
    patch_edge: int = 32
    seed: int = 0
    expansion: str = "nearest"
    epsilon_denominator: float = 1e-6
    retain_layer_maps: bool = False

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.masks_per_layer < 1:
            raise ValueError("masks_per_layer must be >= 1")
        if self.patch_edge < 1:
            raise ValueError("patch_edge must be >= 1")
        if self.expansion not in ("nearest", "bilinear"):
            raise ValueError(f"unknown expansion mode {self.expansion!r}")
        if not self.epsilon_denominator > 0.0:
            raise ValueError("epsilon_denominator must be > 0")


class EngineAborted(RuntimeError):
    """Backend failure mid-run; carries how far sampling got."""

    def __init__(self, message: str, layer: int, masks_done: int, masks_total: int):
        super().__init__(f"{message} (layer {layer}, {masks_done}/{masks_total} masks)")
        self.layer = layer
        self.masks_done = masks_done
        self.masks_total = masks_total


class _Kahan:
    """Elementwise compensated accumulator; exact add order in, stable sum out."""

    def __init__(self, shape):
        self.total = np.zeros(shape)
        self._comp = np.zeros(shape)

    def add(self, x):
        y = x - self._comp
        t = self.total + y
        self._comp = (t - self.total) - y
        self.total = t


class LayerAccumulator:
    """Running per-cell sums of one layer: sum f*M, sum M, and scalar sum f."""

    def __init__(self, grid_dims: tuple[int, int]):
        self.sum_score_mask = _Kahan(grid_dims)
        self.sum_mask = _Kahan(grid_dims)
        self.sum_score = _Kahan(())
        self.count = 0

    def add(self, score: float, cells: np.ndarray) -> None:
        if not np.isfinite(score):
            raise ScoringError(f"non-finite score {score!r}")
        c = cells.astype(np.float64)
        self.sum_score_mask.add(score * c)
        self.sum_mask.add(c)
        self.sum_score.add(score)
        self.count += 1

    def means(self) -> tuple[np.ndarray, np.ndarray, float]:
        n = self.count
        return (self.sum_score_mask.total / n, self.sum_mask.total / n,
                float(self.sum_score.total) / n)


def _score_batch(backend, spec: ScoreSpec, image: Image, grids: np.ndarray,
                 expansion: str, patch_edge: int, lock: Lock | None,
                 batch_tag) -> np.ndarray:
    height, width = image.height, image.width
    masks = expand_cells_batch(grids, height, width, expansion, patch_edge)
    stack = image.pixels[None, :, :, :] * masks[:, :, :, None]
    raw_entry = getattr(backend, "detect_pixel_stack", None)
    try:
        if raw_entry is not None:
            results = raw_entry(stack) if lock is None else _locked(lock, raw_entry, stack)
        else:
            images = [Image(stack[b]) for b in range(stack.shape[0])]
            results = backend.detect_batch(images) if lock is None \
                else _locked(lock, backend.detect_batch, images)
    except Exception as exc:
        raise ScoringError(f"backend failed: {exc}", image_id=batch_tag) from exc
    return np.array([score_detections(spec, dets) for dets in results], dtype=np.float64)


def _locked(lock: Lock, fn, arg):
    with lock:
        return fn(arg)


def _sample_layer(image: Image, backend, spec: ScoreSpec, layer: int, p: float,
                  n_masks: int, seed: int, expansion: str, patch_edge: int,
                  grid_dims: tuple[int, int], workers: int,
                  grid_provider: GridProvider | None,
                  progress: ProgressFn | None) -> LayerAccumulator:
    h, w = grid_dims
    batch = max(1, min(backend.capabilities.max_batch, 512))
    lock = None if backend.capabilities.concurrent_safe else Lock()
    started = perf_counter()

    def make_grids(j0: int, j1: int) -> np.ndarray:
        grids = np.empty((j1 - j0, h, w), dtype=np.uint8)
        for j in range(j0, j1):
            if grid_provider is not None:
                cells = np.asarray(grid_provider(layer, j), dtype=np.uint8)
                if cells.shape != (h, w):
                    raise ValueError(f"injected grid shape {cells.shape}, expected {(h, w)}")
            else:
                cells = bernoulli_cells(h, w, p, rng_stream(seed, layer, j))
            grids[j - j0] = cells
        return grids

    def run_batch(j0: int) -> tuple[np.ndarray, np.ndarray]:
        j1 = min(j0 + batch, n_masks)
        grids = make_grids(j0, j1)
        scores = _score_batch(backend, spec, image, grids, expansion, patch_edge,
                              lock, batch_tag=(layer, j0))
        return scores, grids

    starts = list(range(0, n_masks, batch))
    results: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(starts)
    abort: ScoringError | None = None
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_batch, j0): bi for bi, j0 in enumerate(starts)}
            for fut, bi in futures.items():
                try:
                    results[bi] = fut.result()
                except ScoringError as exc:
                    abort = abort or exc
    else:
        for bi, j0 in enumerate(starts):
            try:
                results[bi] = run_batch(j0)
            except ScoringError as exc:
                abort = exc
                break

    acc = LayerAccumulator(grid_dims)
    next_report = PROGRESS_EVERY
    for res in results:
        if res is None:
            break
        scores, grids = res
        for b in range(len(scores)):
            acc.add(float(scores[b]), grids[b])
        if progress is not None and acc.count >= next_report:
            rate = acc.count / max(perf_counter() - started, 1e-9)
            progress(layer, acc.count, n_masks, rate)
            next_report += PROGRESS_EVERY
    if abort is not None:
        raise EngineAborted(str(abort), layer=layer, masks_done=acc.count,
                            masks_total=n_masks) from abort
    return acc


def _layer_map(acc: LayerAccumulator, height: int, width: int, expansion: str,
               patch_edge: int, z_eff: np.ndarray, epsilon: float) -> tuple[np.ndarray, int]:
    mean_sm_cells, mean_m_cells, mean_s = acc.means()
    # Expansion is linear in the cell values, so expanding the accumulated
    # means equals accumulating expanded masks.
    mean_sm = expand_cells(mean_sm_cells, height, width, expansion, patch_edge)
    mean_m = expand_cells(mean_m_cells, height, width, expansion, patch_edge)
    numerator = mean_sm - mean_s * mean_m
    keep = np.maximum(mean_m, epsilon)
    drop = np.maximum(1.0 - mean_m, epsilon)
    clamped = int(np.count_nonzero((mean_m < epsilon) | (1.0 - mean_m < epsilon)))
    return numerator / (z_eff * keep * drop), clamped


@dataclass(frozen=True)
class EngineReport:
    """Side facts from one estimator run (not part of the map payload)."""

    clamped_pixels: int
    masks_scored: int


def bsed_attribution(image: Image, target: TargetDetection, backend, spec: ScoreSpec,
                     config: EngineConfig, workers: int = 1,
                     grid_provider: GridProvider | None = None,
                     progress: ProgressFn | None = None,
                     report_out: list | None = None) -> AttributionMap:
    """Layered masked-sampling attribution map for one target detection."""
    if spec.target != target:
        raise ValueError("score spec targets a different detection")
    height, width = image.height, image.width
    grid_dims = grid_shape(height, width, config.patch_edge)
    z_eff = patch_pixel_counts(height, width, config.patch_edge)
    total = np.zeros((height, width))
    layer_maps = [] if config.retain_layer_maps else None
    clamped = 0
    scored = 0
    for layer in range(1, config.layers + 1):
        p = layer_probability(layer, config.layers)
        acc = _sample_layer(image, backend, spec, layer, p, config.masks_per_layer,
                            config.seed, config.expansion, config.patch_edge,
                            grid_dims, workers, grid_provider, progress)
        lmap, nclamp = _layer_map(acc, height, width, config.expansion,
                                  config.patch_edge, z_eff, config.epsilon_denominator)
        total += lmap
        clamped += nclamp
        scored += acc.count
        if layer_maps is not None:
            layer_maps.append(lmap)
    total /= config.layers
    if report_out is not None:
        report_out.append(EngineReport(clamped_pixels=clamped, masks_scored=scored))
    return AttributionMap(total, target=target, config=config,
                          layer_maps=tuple(layer_maps) if layer_maps is not None else None)


def drise_saliency(image: Image, target: TargetDetection, backend, spec: ScoreSpec,
                   p: float = 0.5, n_masks: int = 6000, seed: int = 0,
                   patch_edge: int = 32, expansion: str = "nearest",
                   normalize: bool = False, workers: int = 1,
                   grid_provider: GridProvider | None = None,
                   progress: ProgressFn | None = None) -> AttributionMap:
    """Score-weighted mask sum at a single keep-probability (the baseline).

    The raw sum is the method as published; ``normalize`` divides by the
    mask count, which preserves the pixel ordering either way.
    """
    if spec.target != target:
        raise ValueError("score spec targets a different detection")
    height, width = image.height, image.width
    grid_dims = grid_shape(height, width, patch_edge)
    acc = _sample_layer(image, backend, spec, 1, p, n_masks, seed, expansion,
                        patch_edge, grid_dims, workers, grid_provider, progress)
    weighted = acc.sum_score_mask.total if not normalize \
        else acc.sum_score_mask.total / acc.count
    values = expand_cells(weighted, height, width, expansion, patch_edge)
    return AttributionMap(values, target=target, config=None)


def layer_boxplot_stats(amap: AttributionMap) -> list[dict[str, float]]:
    """Five-number summary of each retained layer map."""
    if amap.layer_maps is None:
        raise ValueError("map was built without retain_layer_maps")
    out = []
    for lm in amap.layer_maps:
        lo, q1, med, q3, hi = np.percentile(lm, [0, 25, 50, 75, 100])
        out.append({"min": float(lo), "q1": float(q1), "median": float(med),
                    "q3": float(q3), "max": float(hi)})
    return out
