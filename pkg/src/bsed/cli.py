"""Command-line surface: explain, evaluate, axioms, correct, compare, oracle.

One JSON config file describes the run; flags override config values. All
randomness flows from the single seed, every subcommand writes only inside
the configured output directory, and reruns with the same config and seed
are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shlex
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

from . import analysis, metrics
from .backends import SyntheticBackend, SyntheticTemplate
from .core import AttributionMap, BBox, Image, TargetDetection, map_stats
from .engine import EngineConfig, bsed_attribution, drise_saliency
from .mapfile import read_map, write_heatmap_png, write_map
from .masking import layer_probability
from .oracle import (exact_baseline_shapley_image, exact_conditional_gap,
                     masked_scene_game)
from .remote import ProtocolError, RemoteBackend
from .scoring import ScoreSpec, ScoringError, score_detections

ENV_BACKEND_CMD = "BSED_BACKEND_CMD"
GAP_REPORT_MAX_CELLS = 12

EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_INTERNAL = 4


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _fail(kind: str, message: str, code: int = EXIT_CONFIG) -> CliError:
    return CliError(kind, message, code)


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise _fail("io", f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise _fail("config", f"config is not valid JSON: {exc}")


def engine_config_from(cfg: dict, args) -> EngineConfig:
    section = dict(cfg.get("engine", {}))
    overrides = {
        "layers": args.layers,
        "masks_per_layer": args.masks,
        "patch_edge": args.patch,
        "seed": args.seed,
        "expansion": args.expansion,
    }
    for key, val in overrides.items():
        if val is not None:
            section[key] = val
    if getattr(args, "emit_layers", False):
        section["retain_layer_maps"] = True
    try:
        return EngineConfig(**section)
    except (TypeError, ValueError) as exc:
        raise _fail("config", f"bad engine config: {exc}")


def template_from(obj: dict) -> SyntheticTemplate:
    try:
        return SyntheticTemplate(
            bbox=BBox(*[float(v) for v in obj["bbox"]]),
            class_id=int(obj["class_id"]),
            color=tuple(float(c) for c in obj["color"]),
            tol=float(obj.get("tol", 10.0 / 255.0)),
            mode=obj.get("mode", "additive"),
            emit_threshold=float(obj.get("emit_threshold", 0.05)),
            group=obj.get("group"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise _fail("config", f"bad synthetic template {obj!r}: {exc}")


def build_backend(cfg: dict):
    section = cfg.get("backend", {})
    kind = section.get("kind", "synthetic")
    if kind == "synthetic":
        templates = [template_from(t) for t in section.get("templates", [])]
        if not templates:
            raise _fail("config", "synthetic backend needs at least one template")
        return SyntheticBackend(templates)
    timeout = float(section.get("timeout", 30.0))
    try:
        if kind == "subprocess":
            command = section.get("command")
            if not command and os.environ.get(ENV_BACKEND_CMD):
                command = shlex.split(os.environ[ENV_BACKEND_CMD])
            if not command:
                raise _fail("config",
                            f"subprocess backend needs a command (or {ENV_BACKEND_CMD})")
            return RemoteBackend.from_command(command, timeout=timeout)
        if kind == "http":
            url = section.get("url")
            if not url:
                raise _fail("config", "http backend needs a url")
            return RemoteBackend.from_url(url, timeout=timeout)
    except ProtocolError as exc:
        raise _fail("backend", f"backend handshake failed: {exc}", EXIT_BACKEND)
    raise _fail("config", f"unknown backend kind {kind!r}")


def load_image(cfg: dict) -> Image:
    path = cfg.get("io", {}).get("image")
    if not path:
        raise _fail("config", "io.image is required")
    try:
        return Image.load(path)
    except FileNotFoundError:
        raise _fail("io", f"image not found: {path}")
    except OSError as exc:
        raise _fail("io", f"cannot read image {path}: {exc}")


def resolve_target(cfg: dict, backend, image: Image) -> TargetDetection:
    spec = cfg.get("io", {}).get("target")
    if not spec:
        raise _fail("config", "io.target is required")
    if "bbox" in spec:
        try:
            return TargetDetection(bbox=BBox(*[float(v) for v in spec["bbox"]]),
                                   class_id=int(spec["class_id"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise _fail("config", f"bad target {spec!r}: {exc}")
    if "detection_index" in spec:
        idx = int(spec["detection_index"])
        dets = backend.detect(image)
        if not (0 <= idx < len(dets)):
            raise _fail("config",
                        f"detection_index {idx} out of range ({len(dets)} detections)")
        det = dets[idx]
        return TargetDetection(bbox=det.bbox, class_id=det.class_id)
    raise _fail("config", "io.target needs bbox+class_id or detection_index")


def out_dir_from(cfg: dict, args) -> Path:
    out = args.out or cfg.get("io", {}).get("out_dir")
    if not out:
        raise _fail("config", "output directory required (io.out_dir or --out)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def make_progress(quiet: bool):
    if quiet:
        return None

    def progress(layer: int, done: int, total: int, rate: float) -> None:
        print(f"[layer {layer}] {done}/{total} masks ({rate:.0f}/s)", file=sys.stderr)

    return progress


def _stats_payload(amap, image, backend, spec) -> dict:
    stats = map_stats(amap)
    full = score_detections(spec, backend.detect(image))
    return {
        "sum_pos": stats.sum_pos,
        "sum_neg": stats.sum_neg,
        "min": stats.min,
        "max": stats.max,
        "histogram": {
            "counts": stats.hist_counts.tolist(),
            "edges": stats.hist_edges.tolist(),
        },
        "full_score": full,
        "efficiency_plain": metrics.efficiency_metric(amap, full, mode="plain"),
    }


def cmd_explain(cfg: dict, args) -> int:
    backend = build_backend(cfg)
    image = load_image(cfg)
    target = resolve_target(cfg, backend, image)
    config = engine_config_from(cfg, args)
    combine = cfg.get("score", {}).get("combine", "multiplicative")
    spec = ScoreSpec(target=target, combine=combine)
    out = out_dir_from(cfg, args)
    progress = make_progress(args.quiet)
    try:
        if args.method == "drise":
            amap = drise_saliency(image, target, backend, spec,
                                  p=0.5, n_masks=config.masks_per_layer,
                                  seed=config.seed, patch_edge=config.patch_edge,
                                  expansion=config.expansion, workers=args.workers,
                                  progress=progress)
        else:
            amap = bsed_attribution(image, target, backend, spec, config,
                                    workers=args.workers, progress=progress)
    except ScoringError as exc:
        raise _fail("backend", str(exc), EXIT_BACKEND)
    write_map(amap, out / "attribution.bsedmap")
    write_heatmap_png(amap, out / "heatmap.png", image=image)
    write_json(out / "stats.json", _stats_payload(amap, image, backend, spec))
    if args.emit_layers and amap.layer_maps is not None:
        for k, lm in enumerate(amap.layer_maps, start=1):
            write_map(AttributionMap(lm, target=target), out / f"layer_{k}.bsedmap")
    backend.close()
    return 0


def cmd_evaluate(cfg: dict, args) -> int:
    backend = build_backend(cfg)
    image = load_image(cfg)
    target = resolve_target(cfg, backend, image)
    combine = cfg.get("score", {}).get("combine", "multiplicative")
    spec = ScoreSpec(target=target, combine=combine)
    out = out_dir_from(cfg, args)
    map_path = args.map or str(out / "attribution.bsedmap")
    try:
        amap = read_map(map_path)
    except FileNotFoundError:
        raise _fail("io", f"attribution map not found: {map_path}")
    config = engine_config_from(cfg, args)
    try:
        full = score_detections(spec, backend.detect(image))
        deletion = metrics.deletion_curve(amap, image, backend, spec, steps=args.steps)
        insertion = metrics.insertion_curve(amap, image, backend, spec, steps=args.steps)
        dummy = metrics.dummy_metric(amap, image, backend, spec, rng=config.seed,
                                     patch_edge=config.patch_edge)
    except ScoringError as exc:
        raise _fail("backend", str(exc), EXIT_BACKEND)
    report = {
        "epg": metrics.epg(amap, target.bbox),
        "deletion": {"auc": deletion.auc, "points": deletion.points()},
        "insertion": {"auc": insertion.auc, "points": insertion.points()},
        "dummy": {"value": dummy.value, "qualifying": dummy.qualifying,
                  "trials": len(dummy.trials), "sigma": dummy.sigma},
        "efficiency": {
            "plain": metrics.efficiency_metric(amap, full, mode="plain"),
            "axiom": metrics.efficiency_metric(amap, full, 0.0, mode="axiom"),
            "attribution_sum": float(amap.values.sum()),
            "full_score": full,
        },
    }
    write_json(out / "evaluation.json", report)
    if args.csv:
        for name, curve in (("deletion", deletion), ("insertion", insertion)):
            with open(out / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["fraction", "score"])
                writer.writerows(curve.points())
    backend.close()
    return 0


def cmd_axioms(cfg: dict, args) -> int:
    backend = build_backend(cfg)
    image = load_image(cfg)
    target = resolve_target(cfg, backend, image)
    config = engine_config_from(cfg, args)
    spec = ScoreSpec(target=target, combine="multiplicative")
    out = out_dir_from(cfg, args)
    progress = make_progress(args.quiet)
    try:
        amap = bsed_attribution(image, target, backend, spec, config,
                                workers=args.workers, progress=progress)
        full = score_detections(spec, backend.detect(image))
        dummy = metrics.dummy_metric(amap, image, backend, spec, rng=config.seed,
                                     patch_edge=config.patch_edge)
        linearity = metrics.linearity_harness(image, target, backend, config,
                                              workers=args.workers)
    except ScoringError as exc:
        raise _fail("backend", str(exc), EXIT_BACKEND)
    report = {
        "dummy": {"value": dummy.value, "qualifying": dummy.qualifying,
                  "trials": len(dummy.trials), "sigma": dummy.sigma},
        "efficiency": {
            "plain": metrics.efficiency_metric(amap, full, mode="plain"),
            "axiom": metrics.efficiency_metric(amap, full, 0.0, mode="axiom"),
            "attribution_sum": float(amap.values.sum()),
            "full_score": full,
            "baseline_score": 0.0,
        },
        "linearity": {"max_residual": linearity.max_residual},
    }
    write_json(out / "axioms.json", report)
    backend.close()
    return 0


def cmd_correct(cfg: dict, args) -> int:
    backend = build_backend(cfg)
    image = load_image(cfg)
    target = resolve_target(cfg, backend, image)
    config = engine_config_from(cfg, args)
    out = out_dir_from(cfg, args)
    progress = make_progress(args.quiet)
    spec = ScoreSpec(target=target, combine="multiplicative")
    try:
        amap = bsed_attribution(image, target, backend, spec, config,
                                workers=args.workers, progress=progress)
        if args.rival_class is not None:
            rival_target = TargetDetection(bbox=target.bbox, class_id=args.rival_class)
            rival_spec = ScoreSpec(target=rival_target, combine="multiplicative")
            rival_map = bsed_attribution(image, rival_target, backend, rival_spec,
                                         config, workers=args.workers, progress=progress)
            trace = analysis.flip_true_detection(
                image, amap, rival_map, backend, spec, rival_spec,
                step=args.step, max_fraction=args.max_fraction)
        else:
            trace = analysis.correct_by_negative_masking(
                image, amap, backend, spec, step=args.step,
                max_fraction=args.max_fraction)
    except ScoringError as exc:
        raise _fail("backend", str(exc), EXIT_BACKEND)

    with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "masked_count", "score_primary", "score_rival"])
        for idx, entry in enumerate(trace.steps):
            writer.writerow([idx, entry.masked_count, entry.score_primary,
                             "" if entry.score_rival is None else entry.score_rival])

    final = trace.steps[-1]
    flat = image.pixels.reshape(-1, 3).copy()
    flat[trace.pixel_order] = 0.0
    Image(flat.reshape(image.pixels.shape)).save(out / "corrected.png")
    write_json(out / "detections.json", {
        "reason": trace.reason,
        "complete": trace.complete,
        "masked_count": final.masked_count,
        "detections": [
            {"bbox": list(d.bbox.as_tuple()), "class_id": d.class_id,
             "class_scores": {str(k): v for k, v in d.class_scores.items()},
             "objectness": d.objectness}
            for d in final.detections
        ],
    })
    backend.close()
    return 0


def cmd_compare(cfg: dict, args) -> int:
    backend = build_backend(cfg)
    image = load_image(cfg)
    target = resolve_target(cfg, backend, image)
    config = engine_config_from(cfg, args)
    combine = cfg.get("score", {}).get("combine", "multiplicative")
    spec = ScoreSpec(target=target, combine=combine)
    out = out_dir_from(cfg, args)
    progress = make_progress(args.quiet)

    runs: list[tuple[str, object]] = []
    try:
        for k in args.layers_list:
            kcfg = replace(config, layers=k)
            runs.append((f"layers_{k}",
                         bsed_attribution(image, target, backend, spec, kcfg,
                                          workers=args.workers, progress=progress)))
        if args.with_drise:
            runs.append(("drise",
                         drise_saliency(image, target, backend, spec, p=0.5,
                                        n_masks=config.masks_per_layer, seed=config.seed,
                                        patch_edge=config.patch_edge,
                                        expansion=config.expansion,
                                        workers=args.workers, progress=progress)))
        report = {}
        panels = []
        for name, amap in runs:
            deletion = metrics.deletion_curve(amap, image, backend, spec, steps=args.steps)
            insertion = metrics.insertion_curve(amap, image, backend, spec, steps=args.steps)
            report[name] = {
                "epg": metrics.epg(amap, target.bbox),
                "deletion_auc": deletion.auc,
                "insertion_auc": insertion.auc,
            }
            heat_path = out / f"heatmap_{name}.png"
            write_heatmap_png(amap, heat_path, image=image)
            panels.append(heat_path)
    except ScoringError as exc:
        raise _fail("backend", str(exc), EXIT_BACKEND)

    images = [_PILImage.open(p).convert("RGB") for p in panels]
    widths = sum(im.width for im in images)
    height = max(im.height for im in images)
    strip = _PILImage.new("RGB", (widths, height))
    x = 0
    for im in images:
        strip.paste(im, (x, 0))
        x += im.width
    strip.save(out / "side_by_side.png")
    write_json(out / "compare.json", report)
    backend.close()
    return 0


def cmd_oracle(cfg: dict, args) -> int:
    section = cfg.get("backend", {})
    if section.get("kind", "synthetic") != "synthetic":
        raise _fail("config", "the oracle subcommand requires the synthetic backend")
    templates = [template_from(t) for t in section.get("templates", [])]
    backend = SyntheticBackend(templates)
    image = load_image(cfg)
    target = resolve_target(cfg, backend, image)
    config = engine_config_from(cfg, args)
    out = out_dir_from(cfg, args)
    try:
        result = exact_baseline_shapley_image(templates, image, target,
                                              patch_edge=config.patch_edge)
    except ValueError as exc:
        raise _fail("config", str(exc))
    exact = result.exact
    efficiency_residual = abs(float(exact.attributions.sum())
                              - (exact.full_value - exact.baseline_value))
    recombination_residual = float(
        np.abs(exact.per_layer.mean(axis=1) - exact.attributions).max())
    report = {
        "cells": list(result.cell_values.shape),
        "attributions": exact.attributions.tolist(),
        "per_layer": exact.per_layer.tolist(),
        "axiom_residuals": {
            "efficiency": efficiency_residual,
            "recombination": recombination_residual,
        },
        "evaluations": exact.evaluations,
    }
    if exact.n <= GAP_REPORT_MAX_CELLS:
        spec = ScoreSpec(target=target, combine="multiplicative")
        game = masked_scene_game(templates, image, spec, config.patch_edge)
        gaps = []
        for layer in range(1, config.layers + 1):
            p = layer_probability(layer, config.layers)
            gaps.append({
                "probability": p,
                "gaps": [exact_conditional_gap(game, i, p).gap for i in range(exact.n)],
            })
        report["gaps"] = gaps
    else:
        report["gaps"] = None
    write_json(out / "oracle.json", report)
    write_map(result.map, out / "oracle.bsedmap")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsed",
                                     description="Attribution maps for object detections")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        p.add_argument("--layers", type=int, default=None)
        p.add_argument("--masks", type=int, default=None)
        p.add_argument("--patch", type=int, default=None)
        p.add_argument("--expansion", choices=["nearest", "bilinear"], default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--quiet", action="store_true")

    p_explain = sub.add_parser("explain", help="compute an attribution map")
    common(p_explain)
    p_explain.add_argument("--method", choices=["bsed", "drise"], default="bsed")
    p_explain.add_argument("--emit-layers", action="store_true")
    p_explain.set_defaults(fn=cmd_explain)

    p_eval = sub.add_parser("evaluate", help="benchmark metrics for a map")
    common(p_eval)
    p_eval.add_argument("--map", default=None, help="BSEDMAP file (default: out dir)")
    p_eval.add_argument("--steps", type=int, default=100)
    p_eval.add_argument("--csv", action="store_true")
    p_eval.set_defaults(fn=cmd_evaluate)

    p_axioms = sub.add_parser("axioms", help="axiom metrics for a fresh map")
    common(p_axioms)
    p_axioms.set_defaults(fn=cmd_axioms)

    p_correct = sub.add_parser("correct", help="negative-masking correction trace")
    common(p_correct)
    p_correct.add_argument("--rival-class", type=int, default=None)
    p_correct.add_argument("--step", type=int, default=None)
    p_correct.add_argument("--max-fraction", type=float, default=0.2)
    p_correct.set_defaults(fn=cmd_correct)

    p_compare = sub.add_parser("compare", help="layer sweep vs baseline on one scene")
    common(p_compare)
    p_compare.add_argument("--layers-list", type=lambda s: [int(v) for v in s.split(",")],
                           default=[1, 2, 4])
    p_compare.add_argument("--with-drise", dest="with_drise", action="store_true",
                           default=True)
    p_compare.add_argument("--no-drise", dest="with_drise", action="store_false")
    p_compare.add_argument("--steps", type=int, default=100)
    p_compare.set_defaults(fn=cmd_compare)

    p_oracle = sub.add_parser("oracle", help="exact enumeration report for a small scene")
    common(p_oracle)
    p_oracle.set_defaults(fn=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.fn(cfg, args)
    except CliError as exc:
        print(json.dumps({"error": {"kind": exc.kind, "message": str(exc)}}),
              file=sys.stderr)
        return exc.code
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(json.dumps({"error": {"kind": "internal", "message": f"{type(exc).__name__}: {exc}"}}),
              file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
