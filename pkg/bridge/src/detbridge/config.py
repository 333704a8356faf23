"""Bridge run configuration."""

from __future__ import annotations

from dataclasses import dataclass

EXTRACTION_RULES = ("raw_class_probs", "objectness_times_class")
TRANSPORTS = ("stdio", "http")


@dataclass(frozen=True)
class BridgeConfig:
    """How the bridge loads its model and answers the wire.

    ``extraction`` picks how per-class scores are reported: the model's raw
    class probabilities, or those probabilities folded with objectness.
    The chosen rule is advertised in the hello response metadata.
    """

    model: str = "tiny"
    weights: str | None = None
    confidence: float = 0.25
    device: str = "cpu"
    extraction: str = "raw_class_probs"
    transport: str = "stdio"
    host: str = "127.0.0.1"
    port: int = 8474
    max_batch: int = 16

    def __post_init__(self):
        if self.extraction not in EXTRACTION_RULES:
            raise ValueError(f"unknown extraction rule {self.extraction!r}")
        if self.transport not in TRANSPORTS:
            raise ValueError(f"unknown transport {self.transport!r}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must be in [0, 1]")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
