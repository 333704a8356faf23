import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsed.core import DimensionMismatch, Image
from bsed.masking import (Mask, MaskGrid, apply_mask, coverage, expand, generate_grid,
                          grid_shape, layer_probability, patch_pixel_counts, rng_stream)

small_grids = st.integers(1, 5).flatmap(
    lambda h: st.integers(1, 5).flatmap(
        lambda w: st.lists(st.integers(0, 1), min_size=h * w, max_size=h * w)
        .map(lambda cells: np.array(cells, dtype=np.uint8).reshape(h, w))))


class TestLayerProbability:
    def test_four_layers(self):
        assert [layer_probability(k, 4) for k in (1, 2, 3, 4)] == [0.2, 0.4, 0.6, 0.8]

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            layer_probability(0, 4)
        with pytest.raises(ValueError):
            layer_probability(5, 4)


class TestGenerateGrid:
    def test_rejects_boundary_probability(self):
        rng = rng_stream(0, 1, 0)
        for p in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                generate_grid(4, 4, p, rng)

    def test_binomial_bound(self):
        # 1000 cells at p=0.5: 3-sigma bound on the one-count
        grid = generate_grid(25, 40, 0.5, rng_stream(123, 1, 0))
        ones = int(grid.cells.sum())
        assert 452 <= ones <= 548

    def test_deterministic_per_seed_and_index(self):
        a = generate_grid(6, 6, 0.3, rng_stream(9, 2, 5))
        b = generate_grid(6, 6, 0.3, rng_stream(9, 2, 5))
        c = generate_grid(6, 6, 0.3, rng_stream(9, 2, 6))
        np.testing.assert_array_equal(a.cells, b.cells)
        assert not np.array_equal(a.cells, c.cells)

    def test_order_independent_streams(self):
        # substreams keyed by (layer, index); generation order cannot matter
        first = [generate_grid(3, 3, 0.5, rng_stream(1, k, j)).cells
                 for k in (1, 2) for j in (0, 1)]
        second = [generate_grid(3, 3, 0.5, rng_stream(1, k, j)).cells
                  for k, j in [(2, 1), (1, 0), (2, 0), (1, 1)]]
        np.testing.assert_array_equal(first[0], second[1])
        np.testing.assert_array_equal(first[1], second[3])
        np.testing.assert_array_equal(first[3], second[0])


class TestExpand:
    def test_all_ones_both_modes(self):
        grid = MaskGrid(np.ones((2, 2), dtype=np.uint8), prob=0.5, patch_edge=3)
        for mode in ("nearest", "bilinear"):
            mask = expand(grid, 6, 6, mode)
            np.testing.assert_array_equal(mask.values, np.ones((6, 6)))

    def test_nearest_block_diagonal(self):
        grid = MaskGrid(np.array([[1, 0], [0, 1]], dtype=np.uint8), prob=0.5, patch_edge=2)
        mask = expand(grid, 4, 4, "nearest")
        expected = np.array([
            [1, 1, 0, 0],
            [1, 1, 0, 0],
            [0, 0, 1, 1],
            [0, 0, 1, 1],
        ], dtype=np.float64)
        np.testing.assert_array_equal(mask.values, expected)

    def test_bilinear_interior_strictly_fractional(self):
        grid = MaskGrid(np.array([[1, 0], [0, 1]], dtype=np.uint8), prob=0.5, patch_edge=2)
        mask = expand(grid, 4, 4, "bilinear")
        # midpoints between the two cell centers must be strictly between 0 and 1
        mid = mask.values[1:3, 1:3]
        assert (mid > 0.0).all() and (mid < 1.0).all()
        assert mask.values.min() >= 0.0 and mask.values.max() <= 1.0

    def test_dims_mismatch_rejected(self):
        grid = MaskGrid(np.ones((2, 2), dtype=np.uint8), prob=0.5, patch_edge=2)
        with pytest.raises(DimensionMismatch):
            expand(grid, 9, 9, "nearest")

    @given(small_grids)
    @settings(max_examples=40)
    def test_nearest_block_average_recovers_grid(self, cells):
        h, w = cells.shape
        c = 3
        grid = MaskGrid(cells, prob=0.5, patch_edge=c)
        mask = expand(grid, h * c, w * c, "nearest")
        recovered = mask.values.reshape(h, c, w, c).mean(axis=(1, 3))
        np.testing.assert_array_equal(recovered, cells.astype(np.float64))

    def test_truncated_edges(self):
        # 5x5 image, patch edge 2 -> 3x3 grid; last row/col blocks are 1 wide
        assert grid_shape(5, 5, 2) == (3, 3)
        grid = MaskGrid(np.ones((3, 3), dtype=np.uint8), prob=0.5, patch_edge=2)
        mask = expand(grid, 5, 5, "nearest")
        assert mask.values.shape == (5, 5)
        counts = patch_pixel_counts(5, 5, 2)
        assert counts[0, 0] == 4 and counts[0, 4] == 2 and counts[4, 4] == 1


class TestApplyAndCoverage:
    def test_apply_identity_and_black(self):
        image = Image(np.full((4, 4, 3), 0.8))
        ones = Mask(np.ones((4, 4)), mode="nearest")
        zeros = Mask(np.zeros((4, 4)), mode="nearest")
        np.testing.assert_array_equal(apply_mask(ones, image).pixels, image.pixels)
        np.testing.assert_array_equal(apply_mask(zeros, image).pixels, np.zeros((4, 4, 3)))

    def test_apply_scales(self):
        image = Image(np.full((1, 1, 3), 0.8))
        half = Mask(np.full((1, 1), 0.5), mode="bilinear")
        np.testing.assert_allclose(apply_mask(half, image).pixels, 0.4)

    def test_apply_dim_mismatch(self):
        image = Image(np.zeros((2, 2, 3)))
        with pytest.raises(DimensionMismatch):
            apply_mask(Mask(np.ones((3, 3)), mode="nearest"), image)

    def test_coverage_values_and_bounds(self):
        mask = Mask(np.array([[1.0, 0.0], [0.5, 0.25]]), mode="bilinear")
        assert coverage(mask, (0, 0)) == 1.0
        assert coverage(mask, (0, 1)) == 0.0
        assert coverage(mask, (1, 0)) == 0.5
        with pytest.raises(IndexError):
            coverage(mask, (2, 0))

    def test_nearest_mask_must_be_binary(self):
        with pytest.raises(ValueError):
            Mask(np.full((2, 2), 0.5), mode="nearest")


class TestEmpiricalCoverage:
    def test_mean_coverage_matches_probability(self):
        # Bernoulli CI: empirical mean at any pixel within 4*sqrt(pq/N)
        p, n = 0.3, 400
        hits = np.zeros((6, 6))
        for j in range(n):
            grid = generate_grid(3, 3, p, rng_stream(77, 1, j), patch_edge=2)
            hits += expand(grid, 6, 6, "nearest").values
        bound = 4.0 * np.sqrt(p * (1 - p) / n)
        assert np.abs(hits / n - p).max() <= bound
