"""Low-resolution Bernoulli mask grids and their expansion to image size.

Masks are generated on a coarse h x w grid (one cell per c x c image patch,
edge cells truncated) and expanded to H x W either by block replication
(nearest, binary) or by bilinear interpolation of the cell centers.
Generation never inspects image content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from PIL import Image as _PILImage

from .core import DimensionMismatch, Image, _frozen

EXPANSION_MODES = ("nearest", "bilinear")


@dataclass(frozen=True)
class MaskGrid:
    """Binary cell grid for one sampled mask.

    ``prob`` is the Bernoulli keep-probability the cells were drawn with;
    ``layer`` identifies the sampling stratum, ``patch_edge`` the side
    length c of the image patch each cell governs.
    """

    cells: np.ndarray
    prob: float
    patch_edge: int
    layer: int = 1

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValueError(f"expected (h, w) cells, got shape {cells.shape}")
        if not np.isin(cells, (0, 1)).all():
            raise ValueError("grid cells must be 0 or 1")
        if not (0.0 < self.prob < 1.0):
            raise ValueError(f"probability {self.prob} outside (0, 1)")
        if self.patch_edge < 1:
            raise ValueError("patch edge must be >= 1")
        object.__setattr__(self, "cells", _frozen(cells, dtype=np.uint8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape


@dataclass(frozen=True)
class Mask:
    """Full-resolution mask, values in [0, 1]; binary in nearest mode."""

    values: np.ndarray
    mode: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError(f"expected (H, W) mask, got shape {vals.shape}")
        if self.mode not in EXPANSION_MODES:
            raise ValueError(f"unknown expansion mode {self.mode!r}")
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise ValueError("mask values outside [0, 1]")
        if self.mode == "nearest" and not np.isin(vals, (0.0, 1.0)).all():
            raise ValueError("nearest-mode mask must be binary")
        object.__setattr__(self, "values", _frozen(vals))


def grid_shape(height: int, width: int, patch_edge: int) -> tuple[int, int]:
    """Cell grid dimensions: ceil(H/c) x ceil(W/c)."""
    return math.ceil(height / patch_edge), math.ceil(width / patch_edge)


def layer_probability(layer: int, layers: int) -> float:
    """Keep-probability of stratum k out of K: k / (K + 1)."""
    if not (1 <= layer <= layers):
        raise ValueError(f"layer {layer} outside 1..{layers}")
    return layer / (layers + 1)


def rng_stream(seed: int, layer: int, index: int) -> np.random.Generator:
    """Deterministic substream for one (layer, mask-index) pair.

    Streams are derived counter-style from the master seed, so parallel
    generation is order-independent and reproducible.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(layer, index)))


def bernoulli_cells(h: int, w: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Raw i.i.d. Bernoulli(p) cell array; the sampling core of generate_grid."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability {p} outside (0, 1)")
    if h < 1 or w < 1:
        raise ValueError("grid dims must be >= 1")
    return (rng.random((h, w)) < p).astype(np.uint8)


def generate_grid(h: int, w: int, p: float, rng: np.random.Generator,
                  patch_edge: int = 1, layer: int = 1) -> MaskGrid:
    """Sample an h x w grid of i.i.d. Bernoulli(p) cells."""
    return MaskGrid(bernoulli_cells(h, w, p, rng), prob=p, patch_edge=patch_edge, layer=layer)


@lru_cache(maxsize=64)
def _axis_coords(n_out: int, n_cells: int, patch_edge: int) -> tuple[np.ndarray, np.ndarray]:
    # Cell r samples the interpolant at pixel coordinate r*c + (c-1)/2;
    # outside the outer centers the edge value extends (clamped).
    if n_cells == 1:
        return np.zeros(n_out, dtype=np.intp), np.zeros(n_out, dtype=np.float64)
    t = (np.arange(n_out, dtype=np.float64) - (patch_edge - 1) / 2.0) / patch_edge
    t = np.clip(t, 0.0, n_cells - 1.0)
    i0 = np.minimum(np.floor(t).astype(np.intp), n_cells - 2)
    return i0, t - i0


def expand_cells_batch(cells: np.ndarray, height: int, width: int, mode: str,
                       patch_edge: int) -> np.ndarray:
    """Expand a (B, h, w) cell batch to (B, H, W) float masks.

    Nearest fills each cell's c x c block (edge blocks truncated); bilinear
    interpolates between cell centers and clamps to [0, 1]. Both are linear
    in the cell values.
    """
    b, h, w = cells.shape
    if grid_shape(height, width, patch_edge) != (h, w):
        raise DimensionMismatch(
            f"grid {h}x{w} with patch edge {patch_edge} does not tile {height}x{width}")
    vals = np.asarray(cells, dtype=np.float64)
    if mode == "nearest":
        out = np.repeat(np.repeat(vals, patch_edge, axis=1), patch_edge, axis=2)
        return np.ascontiguousarray(out[:, :height, :width])
    if mode == "bilinear":
        r0, fr = _axis_coords(height, h, patch_edge)
        c0, fc = _axis_coords(width, w, patch_edge)
        r1 = np.minimum(r0 + 1, h - 1)
        c1 = np.minimum(c0 + 1, w - 1)
        rows0, rows1 = r0[:, None], r1[:, None]
        cols0, cols1 = c0[None, :], c1[None, :]
        fr = fr[None, :, None]
        fc = fc[None, None, :]
        top = vals[:, rows0, cols0] * (1.0 - fc) + vals[:, rows0, cols1] * fc
        bot = vals[:, rows1, cols0] * (1.0 - fc) + vals[:, rows1, cols1] * fc
        return np.clip(top * (1.0 - fr) + bot * fr, 0.0, 1.0)
    raise ValueError(f"unknown expansion mode {mode!r}")


def expand_cells(cells: np.ndarray, height: int, width: int, mode: str, patch_edge: int) -> np.ndarray:
    """Expand an (h, w) cell array to an (H, W) float array."""
    return expand_cells_batch(np.asarray(cells)[None, ...], height, width, mode, patch_edge)[0]


def expand(grid: MaskGrid, height: int, width: int, mode: str = "nearest") -> Mask:
    return Mask(expand_cells(grid.cells, height, width, mode, grid.patch_edge), mode=mode)


def apply_mask(mask: Mask, image: Image) -> Image:
    """Element-wise product; mask value 0 gives the black baseline."""
    if mask.values.shape != (image.height, image.width):
        raise DimensionMismatch(
            f"mask {mask.values.shape} vs image {(image.height, image.width)}")
    return Image(image.pixels * mask.values[:, :, None])


def coverage(mask: Mask, pixel: tuple[int, int]) -> float:
    """Mask value at pixel (i, j); raises on out-of-bounds coordinates."""
    i, j = pixel
    h, w = mask.values.shape
    if not (0 <= i < h and 0 <= j < w):
        raise IndexError(f"pixel {pixel} outside {h}x{w} mask")
    return float(mask.values[i, j])


def patch_pixel_counts(height: int, width: int, patch_edge: int) -> np.ndarray:
    """(H, W) array: the pixel count of the patch owning each pixel.

    Interior patches hold patch_edge**2 pixels; patches truncated at the
    right/bottom edges hold fewer, and their actual count is what the
    per-patch normalization divides by.
    """
    row_span = np.minimum(np.arange(height) // patch_edge * patch_edge + patch_edge, height) \
        - (np.arange(height) // patch_edge) * patch_edge
    col_span = np.minimum(np.arange(width) // patch_edge * patch_edge + patch_edge, width) \
        - (np.arange(width) // patch_edge) * patch_edge
    return row_span[:, None].astype(np.float64) * col_span[None, :].astype(np.float64)


def write_mask_png(mask: Mask, path) -> None:
    """Debug dump of one mask as 8-bit grayscale."""
    arr = np.rint(mask.values * 255.0).astype(np.uint8)
    _PILImage.fromarray(arr, mode="L").save(path)
