import numpy as np
import pytest

from bsed.engine import EngineConfig
from bsed.oracle import exact_baseline_shapley_image
from bsed.scenes import distractor_scene, single_template_scene, two_class_scene


@pytest.fixture(scope="session")
def single_scene():
    return single_template_scene()


@pytest.fixture(scope="session")
def single_scene_oracle(single_scene):
    """Exact cell attributions of the single-template scene on the 4x4 grid
    (one 2^16 enumeration per test session)."""
    return exact_baseline_shapley_image(single_scene.backend.templates,
                                        single_scene.image, single_scene.target,
                                        patch_edge=16)


@pytest.fixture(scope="session")
def distractor():
    return distractor_scene()


@pytest.fixture(scope="session")
def two_class():
    return two_class_scene()


@pytest.fixture
def fast_config():
    # 4x4 grid over the 64x64 fixtures; small but enough signal for sanity checks
    return EngineConfig(layers=2, masks_per_layer=1500, patch_edge=16, seed=7)


def cell_aggregate(values: np.ndarray, patch_edge: int) -> np.ndarray:
    """Sum an (H, W) map over its patch grid (truncated edge patches included)."""
    h_cells = -(-values.shape[0] // patch_edge)
    w_cells = -(-values.shape[1] // patch_edge)
    out = np.zeros((h_cells, w_cells))
    for r in range(h_cells):
        for c in range(w_cells):
            out[r, c] = values[r * patch_edge:(r + 1) * patch_edge,
                               c * patch_edge:(c + 1) * patch_edge].sum()
    return out
