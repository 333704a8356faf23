"""Detector wrappers the bridge can serve.

Every wrapper exposes the same surface: ``class_names`` and
``detect_batch(images) -> list[list[dict]]`` where images are (H, W, 3)
float arrays in [0, 1] and each detection dict is wire-ready
({"bbox", "class_id", "class_scores", "objectness"}).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn

TINY_WEIGHTS = Path(__file__).resolve().parent / "weights" / "tiny_blob_net.pt"


class TinyBlobNet(nn.Module):
    """Small pinned-weight convolutional blob detector.

    A 1x1 convolution plus a squared-norm term scores every pixel's
    Gaussian match to each class's prototype color; average pooling over a
    sliding window turns pixel matches into windowed evidence, and the
    best window per class becomes a detection. Weights live in a committed
    state-dict file, so inference is fully pinned.
    """

    CLASS_NAMES = ("red_blob", "green_blob", "blue_blob")
    PROTO_COLORS = np.array([[200, 60, 40], [60, 170, 60], [60, 60, 200]],
                            dtype=np.float64) / 255.0
    WINDOW = 32
    STRIDE = 8
    SIGMA = 0.08

    def __init__(self):
        super().__init__()
        self.color_match = nn.Conv2d(3, len(self.CLASS_NAMES), kernel_size=1)
        self.pool = nn.AvgPool2d(self.WINDOW, self.STRIDE)

    @classmethod
    def reference_state_dict(cls) -> dict:
        """The analytically constructed weights (used once to pin the file)."""
        net = cls()
        sigma_sq = cls.SIGMA ** 2
        weight = torch.tensor(cls.PROTO_COLORS / sigma_sq,
                              dtype=torch.float32).reshape(3, 3, 1, 1)
        bias = torch.tensor(-(cls.PROTO_COLORS ** 2).sum(axis=1) / (2 * sigma_sq),
                            dtype=torch.float32)
        with torch.no_grad():
            net.color_match.weight.copy_(weight)
            net.color_match.bias.copy_(bias)
        return net.state_dict()

    @classmethod
    def from_pinned(cls, weights_path=None) -> "TinyBlobNet":
        path = Path(weights_path) if weights_path else TINY_WEIGHTS
        net = cls()
        state = torch.load(path, map_location="cpu", weights_only=True)
        net.load_state_dict(state, strict=True)
        net.eval()
        return net

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # log of the Gaussian color match: -(||pixel - prototype||^2) / (2 sigma^2)
        dot = self.color_match(x)
        sq = (x * x).sum(dim=1, keepdim=True) / (2 * self.SIGMA ** 2)
        match = torch.exp(torch.clamp(dot - sq, max=0.0))
        return self.pool(match)


class TinyBlobDetector:
    """Decodes TinyBlobNet evidence maps into wire detections."""

    def __init__(self, weights=None, confidence: float = 0.25,
                 device: str = "cpu", extraction: str = "raw_class_probs"):
        self.net = TinyBlobNet.from_pinned(weights).to(device)
        self.device = device
        self.confidence = confidence
        self.extraction = extraction
        self.class_names = list(TinyBlobNet.CLASS_NAMES)

    @torch.no_grad()
    def detect_batch(self, images: list[np.ndarray]) -> list[list[dict]]:
        if not images:
            return []
        shape = images[0].shape
        for im in images:
            if im.shape != shape:
                raise ValueError("batch images must share one shape")
        batch = torch.from_numpy(np.stack(images).astype(np.float32))
        batch = batch.permute(0, 3, 1, 2).to(self.device)
        evidence = self.net(batch).cpu().numpy()  # (B, C, h, w)
        out = []
        for b in range(evidence.shape[0]):
            out.append(self._decode(evidence[b]))
        return out

    def _decode(self, maps: np.ndarray) -> list[dict]:
        window, stride = TinyBlobNet.WINDOW, TinyBlobNet.STRIDE
        detections = []
        for class_id in range(maps.shape[0]):
            grid = maps[class_id]
            flat = int(np.argmax(grid))
            row, col = divmod(flat, grid.shape[1])
            best = float(grid[row, col])
            if best < self.confidence:
                continue
            objectness = min(best, 1.0)
            scores = {}
            for other in range(maps.shape[0]):
                s = float(min(maps[other, row, col], 1.0))
                if self.extraction == "objectness_times_class":
                    s *= objectness
                scores[other] = min(s, 1.0)
            detections.append({
                "bbox": [col * stride, row * stride,
                         col * stride + window, row * stride + window],
                "class_id": class_id,
                "class_scores": {str(k): v for k, v in scores.items()},
                "objectness": objectness,
            })
        return detections


class TorchvisionDetector:
    """Wrapper over torchvision detection models (needs downloadable or
    locally stored weights).

    These models report one label+score per box post-NMS, so class_scores
    carries the labeled class only.
    """

    def __init__(self, name: str, weights=None, confidence: float = 0.25,
                 device: str = "cpu", extraction: str = "raw_class_probs"):
        import torchvision  # optional dependency

        builder = getattr(torchvision.models.detection, name)
        if weights:
            model = builder(weights=None)
            state = torch.load(weights, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
            self.class_names = [f"class_{i}" for i in range(91)]
        else:
            enum_name = "".join(part.capitalize() for part in name.split("_")) + "_Weights"
            weights_enum = getattr(torchvision.models.detection, enum_name, None)
            default = weights_enum.DEFAULT if weights_enum else "DEFAULT"
            model = builder(weights=default)
            meta = getattr(default, "meta", {})
            self.class_names = list(meta.get("categories",
                                             [f"class_{i}" for i in range(91)]))
        self.model = model.to(device).eval()
        self.device = device
        self.confidence = confidence
        self.extraction = extraction

    @torch.no_grad()
    def detect_batch(self, images: list[np.ndarray]) -> list[list[dict]]:
        if not images:
            return []
        tensors = [torch.from_numpy(im.astype(np.float32)).permute(2, 0, 1).to(self.device)
                   for im in images]
        outputs = self.model(tensors)
        results = []
        for out in outputs:
            dets = []
            for box, label, score in zip(out["boxes"].cpu().numpy(),
                                         out["labels"].cpu().numpy(),
                                         out["scores"].cpu().numpy()):
                if score < self.confidence:
                    continue
                dets.append({
                    "bbox": [float(v) for v in box],
                    "class_id": int(label),
                    "class_scores": {str(int(label)): float(score)},
                    "objectness": float(score),
                })
            results.append(dets)
        return results


def load_model(config) -> object:
    """Build the detector a BridgeConfig names."""
    if config.model == "tiny":
        return TinyBlobDetector(weights=config.weights, confidence=config.confidence,
                                device=config.device, extraction=config.extraction)
    if config.model.startswith("torchvision:"):
        return TorchvisionDetector(config.model.split(":", 1)[1],
                                   weights=config.weights,
                                   confidence=config.confidence,
                                   device=config.device,
                                   extraction=config.extraction)
    raise ValueError(f"unknown model {config.model!r}")
