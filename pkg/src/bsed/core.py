"""Domain types shared by every module, plus bounding-box geometry.

All types here are immutable after construction and safe to share across
threads. Coordinates are continuous reals: pixel (i, j) occupies the unit
square [j, j+1) x [i, i+1), so detector boxes are never quantized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np
from PIL import Image as _PILImage


class DimensionMismatch(ValueError):
    """Two grids that must share a shape do not."""


def _frozen(arr: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, continuous pixel coordinates, origin top-left.

    Boxes may legitimately extend past image edges (detector output);
    clamping is the caller's job where an operation calls for it.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate {v!r}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2})")

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area() + b.area() - inter)


def pixel_slice(bbox: BBox, height: int, width: int) -> tuple[int, int, int, int]:
    """Integer pixel ranges (i0, i1, j0, j1), half-open, covered by a box.

    A pixel belongs to the box iff its center lies in [x1, x2) x [y1, y2);
    the result is clamped to the image, so it may be empty (i0 >= i1).
    """
    j0 = max(0, math.ceil(bbox.x1 - 0.5))
    j1 = min(width, math.ceil(bbox.x2 - 0.5))
    i0 = max(0, math.ceil(bbox.y1 - 0.5))
    i1 = min(height, math.ceil(bbox.y2 - 0.5))
    return i0, i1, j0, j1


@dataclass(frozen=True)
class Detection:
    """One detector output: box, class identity, per-class scores.

    ``class_scores`` is a sparse map; classes absent from it read as 0.0,
    so backends that emit only their top-k classes conform.
    """

    bbox: BBox
    class_id: int
    class_scores: Mapping[int, float]
    objectness: float = 1.0

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"negative class id {self.class_id}")
        scores = {int(k): float(v) for k, v in dict(self.class_scores).items()}
        if self.class_id not in scores:
            raise ValueError(f"class_scores missing own class {self.class_id}")
        for k, s in scores.items():
            if not (0.0 <= s <= 1.0):
                raise ValueError(f"class score out of [0,1]: {k} -> {s}")
        if not (0.0 <= self.objectness <= 1.0):
            raise ValueError(f"objectness out of [0,1]: {self.objectness}")
        object.__setattr__(self, "class_scores", MappingProxyType(scores))

    def score_for(self, class_id: int) -> float:
        return self.class_scores.get(class_id, 0.0)


@dataclass(frozen=True)
class TargetDetection:
    """The detection being explained: its box and class label."""

    bbox: BBox
    class_id: int

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"negative class id {self.class_id}")


@dataclass(frozen=True)
class Image:
    """H x W x 3 image, float values in [0, 1] (8-bit sources divided by 255)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if not np.isfinite(px).all():
            raise ValueError("non-finite pixel values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel values outside [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.pixels * 255.0).astype(np.uint8)

    @classmethod
    def load(cls, path) -> "Image":
        with _PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return cls(arr)

    def save(self, path) -> None:
        _PILImage.fromarray(self.to_uint8(), mode="RGB").save(path)


@dataclass(frozen=True)
class AttributionMap:
    """Signed per-pixel contributions to the target detection's score.

    Positive values support the detection, negative values suppress it.
    ``config`` is an opaque snapshot of whatever sampling configuration
    produced the map; ``layer_maps`` holds per-layer sub-maps when the
    producer retained them.
    """

    values: np.ndarray
    target: TargetDetection | None = None
    config: Any = None
    layer_maps: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError(f"expected (H, W) values, got shape {vals.shape}")
        if not np.isfinite(vals).all():
            raise ValueError("non-finite attribution values")
        object.__setattr__(self, "values", _frozen(vals))
        if self.layer_maps is not None:
            frozen = tuple(_frozen(np.asarray(m, dtype=np.float64)) for m in self.layer_maps)
            for m in frozen:
                if m.shape != vals.shape:
                    raise DimensionMismatch("layer map shape differs from final map")
            object.__setattr__(self, "layer_maps", frozen)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MapStats:
    sum_pos: float
    sum_neg: float
    min: float
    max: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray


def map_stats(amap: AttributionMap, bins: int = 32) -> MapStats:
    """Positive/negative attribution sums, extrema, and a value histogram."""
    v = amap.values
    lo, hi = float(v.min()), float(v.max())
    rng = (lo, hi) if hi > lo else (lo - 0.5, hi + 0.5)
    counts, edges = np.histogram(v, bins=bins, range=rng)
    return MapStats(
        sum_pos=float(np.maximum(v, 0.0).sum()),
        sum_neg=float(np.minimum(v, 0.0).sum()),
        min=lo,
        max=hi,
        hist_counts=counts,
        hist_edges=edges,
    )
