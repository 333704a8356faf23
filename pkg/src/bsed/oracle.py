"""Exact small-scale ground truth by full enumeration.

Three references live here: exact per-feature attributions with their
per-coalition-size decomposition, the exact conditional expectation over
independent mask pairs against its covariance-ratio form (the chain the
production estimator rests on), and the exact attribution map of a
synthetic masked-image game at cell resolution. Everything is enumerated,
nothing is sampled.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .backends import SyntheticTemplate, synthetic_detect_stack
from .core import AttributionMap, Image, TargetDetection
from .masking import expand_cells, grid_shape, patch_pixel_counts
from .scoring import ScoreSpec, score_detections

MAX_FEATURES_TABLE = 24   # 2^n value-table enumeration cap
MAX_FEATURES_PAIRS = 16   # pair-enumeration cap


class SetFunction:
    """A deterministic real-valued function of feature subsets (bitsets).

    Subset evaluations are memoized for the lifetime of the instance; the
    full value table over all 2^n subsets is built once on demand. An
    optional vectorized evaluator over arrays of bitsets speeds the table
    up without changing its values.
    """

    def __init__(self, n: int, fn: Callable[[int], float],
                 batch_fn: Callable[[np.ndarray], np.ndarray] | None = None):
        if not (1 <= n <= MAX_FEATURES_TABLE):
            raise ValueError(f"feature count {n} outside 1..{MAX_FEATURES_TABLE}")
        self.n = n
        self._fn = fn
        self._batch_fn = batch_fn
        self._memo: dict[int, float] = {}
        self._table: np.ndarray | None = None
        self.evaluations = 0

    def evaluate(self, subset: int) -> float:
        if not (0 <= subset < (1 << self.n)):
            raise ValueError(f"bitset {subset} outside 0..2^{self.n}-1")
        if self._table is not None:
            return float(self._table[subset])
        if subset not in self._memo:
            self.evaluations += 1
            self._memo[subset] = float(self._fn(subset))
        return self._memo[subset]

    def table(self, workers: int | None = None) -> np.ndarray:
        """All 2^n values, indexed by bitset. Built once, in fixed order."""
        if self._table is not None:
            return self._table
        total = 1 << self.n
        values = np.empty(total, dtype=np.float64)
        if self._batch_fn is not None:
            chunk = 512
            for start in range(0, total, chunk):
                bits = np.arange(start, min(start + chunk, total), dtype=np.int64)
                values[start:start + len(bits)] = self._batch_fn(bits)
            self.evaluations += total
        elif workers and workers > 1:
            # Partitioned evaluation; the fill order of disjoint slices does
            # not affect the table, reductions downstream stay fixed-order.
            def fill(lo: int, hi: int):
                for s in range(lo, hi):
                    values[s] = self._fn(s)
            step = math.ceil(total / workers)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(lambda w: fill(w * step, min((w + 1) * step, total)),
                              range(workers)))
            self.evaluations += total
        else:
            for s in range(total):
                values[s] = self._fn(s)
            self.evaluations += total
        self._table = values
        return values


def additive_game(weights: Sequence[float], baseline: float = 0.0) -> SetFunction:
    """f(S) = baseline + sum of weights over S; the canonical exact case."""
    w = np.asarray(list(weights), dtype=np.float64)
    bits = np.arange(len(w), dtype=np.int64)

    def batch(subsets: np.ndarray) -> np.ndarray:
        member = (subsets[:, None] >> bits[None, :]) & 1
        return baseline + member @ w

    return SetFunction(len(w), lambda s: float(batch(np.array([s]))[0]), batch_fn=batch)


def _popcounts(n: int) -> np.ndarray:
    pc = np.zeros(1 << n, dtype=np.uint8)
    for b in range(n):
        half = 1 << b
        pc[half: half * 2] = pc[:half] + 1
    return pc


@dataclass(frozen=True)
class ExactResult:
    """Exact attributions and their per-coalition-size decomposition.

    ``per_layer[i, l]`` is the mean marginal contribution of feature i over
    coalitions of size l (l = 0..n-1, i excluded); attributions are the
    plain mean of that row.
    """

    attributions: np.ndarray
    per_layer: np.ndarray
    n: int
    evaluations: int
    baseline_value: float
    full_value: float


def exact_shapley(f: SetFunction, workers: int | None = None) -> ExactResult:
    """Attributions by full 2^n enumeration."""
    n = f.n
    values = f.table(workers=workers)
    pc = _popcounts(n)
    all_idx = np.arange(1 << n, dtype=np.int64)
    per_layer = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        bit = 1 << i
        without = all_idx[(all_idx & bit) == 0]
        marg = values[without | bit] - values[without]
        sizes = pc[without]
        sums = np.bincount(sizes, weights=marg, minlength=n)
        counts = np.bincount(sizes, minlength=n)
        per_layer[i] = sums / counts
    attributions = per_layer.mean(axis=1)
    return ExactResult(
        attributions=attributions,
        per_layer=per_layer,
        n=n,
        evaluations=f.evaluations,
        baseline_value=float(values[0]),
        full_value=float(values[-1]),
    )


@dataclass(frozen=True)
class ConditionalGap:
    """Exact pair-conditional marginal vs its covariance-ratio form."""

    pair_conditional: float
    covariance_ratio: float
    gap: float


def exact_conditional_gap(f: SetFunction, i: int, p: float) -> ConditionalGap:
    """Enumerate both sides of the estimator's core approximation step.

    ``pair_conditional`` is the expectation of f(M) - f(M') over independent
    Bernoulli(p) mask pairs conditioned on M having feature i and M' lacking
    it, enumerated pair by pair. ``covariance_ratio`` is
    Cov(f(M), M(i)) / (p (1 - p)) enumerated over single masks.
    """
    n = f.n
    if n > MAX_FEATURES_PAIRS:
        raise ValueError(f"pair enumeration capped at {MAX_FEATURES_PAIRS} features, got {n}")
    if not (0 <= i < n):
        raise ValueError(f"feature {i} outside 0..{n - 1}")
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability {p} outside (0, 1)")
    values = f.table()
    pc = _popcounts(n).astype(np.float64)
    weights = p ** pc * (1.0 - p) ** (n - pc)
    all_idx = np.arange(1 << n, dtype=np.int64)
    bit = 1 << i
    has_i = (all_idx & bit) != 0
    with_i = all_idx[has_i]
    without_i = all_idx[~has_i]
    w_without = weights[without_i]
    v_without = values[without_i]

    num_terms = []
    den_terms = []
    for a in with_i:
        wa = weights[a]
        diffs = values[a] - v_without
        num_terms.append(wa * float(np.sum(w_without * diffs)))
        den_terms.append(wa * float(np.sum(w_without)))
    pair_conditional = math.fsum(num_terms) / math.fsum(den_terms)

    mean_f = math.fsum(weights * values)
    mean_fm = math.fsum(weights[with_i] * values[with_i])
    cov = mean_fm - mean_f * p
    covariance_ratio = cov / (p * (1.0 - p))
    return ConditionalGap(
        pair_conditional=pair_conditional,
        covariance_ratio=covariance_ratio,
        gap=pair_conditional - covariance_ratio,
    )


@dataclass(frozen=True)
class OracleImageResult:
    """Exact attribution of a synthetic scene at cell resolution.

    ``cell_values`` holds one exact attribution per grid cell; ``map`` is
    the per-pixel form with each cell's value spread uniformly over the
    pixels of its patch.
    """

    map: AttributionMap
    cell_values: np.ndarray
    exact: ExactResult


def masked_scene_game(templates: Sequence[SyntheticTemplate], image: Image,
                      spec: ScoreSpec, patch_edge: int) -> SetFunction:
    """The masked-image set function: v(S) = score of the scene with only
    the grid cells in S visible (nearest expansion, black baseline)."""
    h, w = grid_shape(image.height, image.width, patch_edge)
    n = h * w
    if n > MAX_FEATURES_TABLE:
        raise ValueError(f"{h}x{w} grid has {n} cells, cap is {MAX_FEATURES_TABLE}")
    pixels = image.pixels
    cell_bits = np.arange(n, dtype=np.int64)

    def batch(subsets: np.ndarray) -> np.ndarray:
        cells = ((subsets[:, None] >> cell_bits[None, :]) & 1).astype(np.float64)
        cells = cells.reshape(len(subsets), h, w)
        masks = np.repeat(np.repeat(cells, patch_edge, axis=1), patch_edge, axis=2)
        masks = masks[:, : image.height, : image.width]
        stack = pixels[None, :, :, :] * masks[:, :, :, None]
        results = synthetic_detect_stack(templates, stack)
        return np.array([score_detections(spec, dets) for dets in results])

    return SetFunction(n, lambda s: float(batch(np.array([s], dtype=np.int64))[0]),
                       batch_fn=batch)


def exact_baseline_shapley_image(templates: Sequence[SyntheticTemplate], image: Image,
                                 target: TargetDetection, patch_edge: int,
                                 combine: str = "multiplicative",
                                 workers: int | None = None) -> OracleImageResult:
    """Exact attribution map of a synthetic scene, one feature per grid cell."""
    spec = ScoreSpec(target=target, combine=combine)
    game = masked_scene_game(templates, image, spec, patch_edge)
    result = exact_shapley(game, workers=workers)
    h, w = grid_shape(image.height, image.width, patch_edge)
    cell_values = result.attributions.reshape(h, w)
    pixel_map = expand_cells(cell_values, image.height, image.width, "nearest", patch_edge)
    pixel_map = pixel_map / patch_pixel_counts(image.height, image.width, patch_edge)
    amap = AttributionMap(pixel_map, target=target)
    return OracleImageResult(map=amap, cell_values=cell_values, exact=result)
