"""Black-box per-pixel Shapley attribution for object detections.

The estimator perturbs an image with layered random masks, scores each
masked image against a target detection through any black-box detector,
and turns the score/mask statistics into a signed per-pixel attribution
map, together with the exact enumeration oracle, evaluation metrics, a
weighted-mask baseline, and detection-correction workflows built on top.
"""

from .analysis import (CorrectionTrace, FeatureRegions, correct_by_negative_masking,
                       feature_regions, flip_true_detection, region_overlay)
from .backends import (BackendCapabilities, DetectorBackend, SyntheticBackend,
                       SyntheticTemplate, synthetic_detect)
from .core import (AttributionMap, BBox, Detection, DimensionMismatch, Image,
                   MapStats, TargetDetection, iou, map_stats)
from .engine import (EngineAborted, EngineConfig, LayerAccumulator, bsed_attribution,
                     drise_saliency, layer_boxplot_stats)
from .mapfile import map_from_bytes, map_to_bytes, read_map, write_heatmap_png, write_map
from .masking import (Mask, MaskGrid, apply_mask, coverage, expand, generate_grid,
                      grid_shape, layer_probability, rng_stream)
from .metrics import (CurveResult, DummyReport, deletion_curve, dummy_metric,
                      efficiency_metric, epg, insertion_curve, linearity_harness)
from .oracle import (ConditionalGap, ExactResult, OracleImageResult, SetFunction,
                     additive_game, exact_baseline_shapley_image, exact_conditional_gap,
                     exact_shapley)
from .remote import (BackendTimeout, ProtocolError, RemoteBackend, SchemaViolation,
                     TransportError)
from .scoring import ScoreSpec, ScoringError, score, score_detections, similarity

__version__ = "0.1.0"
