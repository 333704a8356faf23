"""Synthetic scene construction: painted rectangles the synthetic detector
can fire on, plus the named fixture scenes the test and experiment suites
share. Colors are multiples of 1/255 so PNG round-trips are lossless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import SyntheticBackend, SyntheticTemplate
from .core import BBox, Image, TargetDetection, pixel_slice
from .scoring import ScoreSpec


def rgb(r: int, g: int, b: int) -> tuple[float, float, float]:
    return (r / 255.0, g / 255.0, b / 255.0)

BACKGROUND = rgb(28, 28, 28)


def blank_canvas(height: int, width: int, background=BACKGROUND) -> np.ndarray:
    canvas = np.empty((height, width, 3), dtype=np.float64)
    canvas[:] = background
    return canvas


def paint(canvas: np.ndarray, bbox: BBox, color, fraction: float = 1.0) -> None:
    """Fill the top ``fraction`` of the box's rows with ``color``.

    Partial painting is how a template's full-image match fraction is set
    below 1 without leaving the box.
    """
    i0, i1, j0, j1 = pixel_slice(bbox, canvas.shape[0], canvas.shape[1])
    rows = int(round((i1 - i0) * fraction))
    canvas[i0:i0 + rows, j0:j1, :] = color


def paint_columns(canvas: np.ndarray, bbox: BBox, color, fraction: float = 1.0) -> None:
    """Fill the left ``fraction`` of the box's columns with ``color``."""
    i0, i1, j0, j1 = pixel_slice(bbox, canvas.shape[0], canvas.shape[1])
    cols = int(round((j1 - j0) * fraction))
    canvas[i0:i1, j0:j0 + cols, :] = color


@dataclass(frozen=True)
class Scene:
    """A rendered image, its detector, and the detection being explained."""

    image: Image
    backend: SyntheticBackend
    target: TargetDetection
    name: str = ""

    def spec(self, combine: str = "multiplicative") -> ScoreSpec:
        return ScoreSpec(target=self.target, combine=combine)


def single_template_scene(height: int = 64, width: int = 64) -> Scene:
    """One fully painted box covering 25% of the image; additive mode.

    The masked-image game this induces is exactly additive over grid
    cells, so it is the estimator-vs-oracle workhorse.
    """
    box = BBox(16, 16, 48, 48)
    color = rgb(200, 60, 40)
    template = SyntheticTemplate(bbox=box, class_id=0, color=color, emit_threshold=0.0)
    canvas = blank_canvas(height, width)
    paint(canvas, box, color)
    return Scene(image=Image(canvas), backend=SyntheticBackend([template]),
                 target=TargetDetection(bbox=box, class_id=0), name="single")


def distractor_scene() -> Scene:
    """A weakly painted target rivaled by a strongly painted competitor.

    The two templates share a winner-takes-all group, so with the full
    image visible the rival suppresses the target's detection entirely
    (score 0 for the target class). Pixels supporting the rival receive
    negative attribution, and masking them restores the target detection:
    the score-correction fixture.
    """
    target_box = BBox(8, 8, 40, 40)
    rival_box = BBox(36, 36, 60, 60)
    target_color = rgb(60, 170, 60)
    rival_color = rgb(60, 60, 200)
    templates = [
        SyntheticTemplate(bbox=target_box, class_id=0, color=target_color,
                          emit_threshold=0.0, group=7),
        SyntheticTemplate(bbox=rival_box, class_id=1, color=rival_color,
                          emit_threshold=0.0, group=7),
    ]
    canvas = blank_canvas(64, 64)
    paint(canvas, target_box, target_color, fraction=0.5)
    paint(canvas, rival_box, rival_color, fraction=1.0)
    return Scene(image=Image(canvas), backend=SyntheticBackend(templates),
                 target=TargetDetection(bbox=target_box, class_id=0), name="distractor")


def two_class_scene() -> Scene:
    """One box, two competing class hypotheses with shared and exclusive
    evidence, all regions aligned to the 16px cell grid.

    Both templates share a winner-takes-all group (the detector emits only
    the stronger class, like an argmax head) and their colors are within
    tolerance of a shared mid tone, so mid-tone pixels count for both
    classes. Pixels exclusive to the winning class carry genuinely
    negative attribution for the rival, and masking them inverts the
    emitted class: the score-inversion fixture. Target is class 0.
    """
    box = BBox(16, 16, 48, 48)
    color_a = rgb(150, 90, 90)
    color_b = rgb(164, 90, 90)
    shared = rgb(157, 90, 90)  # within 10/255 of both
    templates = [
        SyntheticTemplate(bbox=box, class_id=0, color=color_a, emit_threshold=0.0, group=3),
        SyntheticTemplate(bbox=box, class_id=1, color=color_b, emit_threshold=0.0, group=3),
    ]
    canvas = blank_canvas(64, 64)
    paint(canvas, BBox(16, 16, 48, 32), color_a)   # class-0 exclusive: 2 cells
    paint(canvas, BBox(16, 32, 32, 48), shared)    # common evidence: 1 cell
    paint(canvas, BBox(32, 32, 48, 48), color_b)   # class-1 exclusive: 1 cell
    return Scene(image=Image(canvas), backend=SyntheticBackend(templates),
                 target=TargetDetection(bbox=box, class_id=0), name="two_class")


def trend_scene(index: int) -> Scene:
    """One deterministic member of the layered-vs-flat comparison suite.

    Templates carry a real emission threshold, so the score collapses once
    too little evidence is visible; the induced score-vs-keep-probability
    curve is then strongly nonlinear (like a real detector losing its
    detection) and layer averaging has genuine approximation work to do.
    min_pair and overlapping-max members add further non-additivity.
    """
    rng = np.random.default_rng(1000 + index)
    height = width = 64
    canvas = blank_canvas(height, width)
    kind = index % 4
    x = int(rng.integers(4, 20))
    y = int(rng.integers(4, 20))
    bw = int(rng.integers(24, 36))
    bh = int(rng.integers(24, 36))
    box = BBox(x, y, x + bw, y + bh)
    color = rgb(120 + 10 * (index % 10), 60 + 7 * (index % 13), 50)
    threshold = 0.0 if kind == 1 else 0.35
    templates = [SyntheticTemplate(bbox=box, class_id=0, color=color,
                                   emit_threshold=threshold,
                                   mode="min_pair" if kind == 1 else "additive")]
    paint(canvas, box, color, fraction=1.0 if kind != 2 else 0.75)
    if kind == 3:
        other_box = BBox(min(x + 12, 30), min(y + 12, 30),
                         min(x + 12, 30) + 24, min(y + 12, 30) + 24)
        other_color = rgb(70, 140, 180)
        templates.append(SyntheticTemplate(bbox=other_box, class_id=0,
                                           color=other_color, emit_threshold=threshold))
        paint(canvas, other_box, other_color, fraction=0.8)
    return Scene(image=Image(canvas), backend=SyntheticBackend(templates),
                 target=TargetDetection(bbox=box, class_id=0), name=f"trend_{index}")


def trend_suite(count: int = 20) -> list[Scene]:
    return [trend_scene(i) for i in range(count)]
