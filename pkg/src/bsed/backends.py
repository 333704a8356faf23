"""Detector backends: the abstract interface and the synthetic detector.

The synthetic detector scores each template by the fraction of its box
whose pixels still show the template color, which makes the resulting
masked-image game analytically tractable: with nearest (binary) masks and
the additive mode it is an exactly additive set function over grid cells,
the ground truth the exact-enumeration oracle is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BBox, Detection, Image, pixel_slice

DEFAULT_MATCH_TOL = 10.0 / 255.0
TEMPLATE_MODES = ("additive", "min_pair")


@dataclass(frozen=True)
class BackendCapabilities:
    max_batch: int
    concurrent_safe: bool
    class_names: tuple[str, ...] | None = None


class DetectorBackend:
    """Black-box detector: an image in, a detection list out.

    ``detect_batch(images)[i]`` must equal ``detect(images[i])``; the
    default implementation guarantees it by construction.
    """

    capabilities: BackendCapabilities

    def detect(self, image: Image) -> list[Detection]:
        raise NotImplementedError

    def detect_batch(self, images: Sequence[Image]) -> list[list[Detection]]:
        return [self.detect(im) for im in images]

    def close(self) -> None:
        pass


@dataclass(frozen=True)
class SyntheticTemplate:
    """One detectable rectangle: a box, a class, and a flat color.

    ``mode`` controls how the per-pixel match fraction v becomes the raw
    score: ``additive`` emits v itself; ``min_pair`` emits the minimum of
    the fractions over the left and right halves of the box. Templates
    sharing a ``group`` compete winner-takes-all: only the member with the
    highest raw score is emitted, which is what lets a scene model the
    class rivalry of real detector heads (and is the only way a masked
    pixel can *raise* a score).
    """

    bbox: BBox
    class_id: int
    color: tuple[float, float, float]
    tol: float = DEFAULT_MATCH_TOL
    mode: str = "additive"
    emit_threshold: float = 0.05
    group: int | None = None

    def __post_init__(self):
        if self.mode not in TEMPLATE_MODES:
            raise ValueError(f"unknown template mode {self.mode!r}")
        if len(self.color) != 3 or any(not (0.0 <= c <= 1.0) for c in self.color):
            raise ValueError(f"color must be an RGB triple in [0,1], got {self.color}")
        if max(self.color) <= self.tol:
            raise ValueError("template color matches the black baseline within tol")
        if self.tol < 0.0:
            raise ValueError("negative tolerance")
        if self.class_id < 0:
            raise ValueError("negative class id")


def _batch_match_fractions(template: SyntheticTemplate, stack: np.ndarray,
                           i0: int, i1: int, j0: int, j1: int) -> np.ndarray:
    crop = stack[:, i0:i1, j0:j1, :]
    color = np.asarray(template.color, dtype=np.float64)
    hit = (np.abs(crop - color) <= template.tol).all(axis=3)
    return hit.mean(axis=(1, 2))


def _batch_raw_scores(template: SyntheticTemplate, stack: np.ndarray,
                      height: int, width: int) -> np.ndarray:
    i0, i1, j0, j1 = pixel_slice(template.bbox, height, width)
    if not (0 <= template.bbox.x1 and template.bbox.x2 <= width
            and 0 <= template.bbox.y1 and template.bbox.y2 <= height):
        raise ValueError(f"template box {template.bbox} extends past the {height}x{width} image")
    if i0 >= i1 or j0 >= j1:
        raise ValueError(f"template box {template.bbox} covers no pixels")
    if template.mode == "additive":
        return _batch_match_fractions(template, stack, i0, i1, j0, j1)
    mid = j0 + (j1 - j0) // 2
    if mid == j0 or mid == j1:
        return np.zeros(stack.shape[0])
    left = _batch_match_fractions(template, stack, i0, i1, j0, mid)
    right = _batch_match_fractions(template, stack, i0, i1, mid, j1)
    return np.minimum(left, right)


def synthetic_detect_stack(templates: Sequence[SyntheticTemplate],
                           stack: np.ndarray) -> list[list[Detection]]:
    """Vectorized detection over a (B, H, W, 3) pixel stack."""
    n_img, height, width = stack.shape[0], stack.shape[1], stack.shape[2]
    raw = np.stack([_batch_raw_scores(t, stack, height, width) for t in templates], axis=1) \
        if templates else np.zeros((n_img, 0))

    # Winner-takes-all inside each group; earlier template wins ties.
    suppressed = np.zeros_like(raw, dtype=bool)
    groups: dict[int, list[int]] = {}
    for idx, t in enumerate(templates):
        if t.group is not None:
            groups.setdefault(t.group, []).append(idx)
    for members in groups.values():
        if len(members) < 2:
            continue
        sub = raw[:, members]
        winner = np.argmax(sub, axis=1)  # first max wins
        for pos, idx in enumerate(members):
            suppressed[:, idx] |= winner != pos

    results: list[list[Detection]] = []
    for b in range(n_img):
        dets = []
        for idx, t in enumerate(templates):
            r = float(raw[b, idx])
            if suppressed[b, idx] or r < t.emit_threshold:
                continue
            dets.append(Detection(bbox=t.bbox, class_id=t.class_id,
                                  class_scores={t.class_id: min(r, 1.0)}))
        results.append(dets)
    return results


def synthetic_detect(templates: Sequence[SyntheticTemplate], image: Image) -> list[Detection]:
    return synthetic_detect_stack(templates, image.pixels[None, ...])[0]


class SyntheticBackend(DetectorBackend):
    """In-process detector over a fixed template set. Pure and thread-safe."""

    def __init__(self, templates: Sequence[SyntheticTemplate], max_batch: int = 256):
        self.templates = tuple(templates)
        self.capabilities = BackendCapabilities(max_batch=max_batch, concurrent_safe=True)

    def detect(self, image: Image) -> list[Detection]:
        return synthetic_detect(self.templates, image)

    def detect_batch(self, images: Sequence[Image]) -> list[list[Detection]]:
        if not images:
            return []
        stack = np.stack([im.pixels for im in images], axis=0)
        return synthetic_detect_stack(self.templates, stack)

    def detect_pixel_stack(self, stack: np.ndarray) -> list[list[Detection]]:
        """Raw (B, H, W, 3) entry point; same results as detect_batch."""
        return synthetic_detect_stack(self.templates, stack)
