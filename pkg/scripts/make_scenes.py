"""Materialize the named fixture scenes as PNGs plus ready-to-run CLI configs.

Usage: python scripts/make_scenes.py [--out DIR]

Each scene directory gets scene.png and config.json, so e.g.
    bsed explain --config <dir>/single/config.json
works immediately afterwards.
"""

import argparse
import json
from pathlib import Path

from bsed.scenes import distractor_scene, single_template_scene, two_class_scene


def scene_config(scene, scene_path: Path, out_dir: Path) -> dict:
    return {
        "engine": {"layers": 4, "masks_per_layer": 6000, "patch_edge": 16, "seed": 0},
        "backend": {
            "kind": "synthetic",
            "templates": [
                {
                    "bbox": list(t.bbox.as_tuple()),
                    "class_id": t.class_id,
                    "color": list(t.color),
                    "tol": t.tol,
                    "mode": t.mode,
                    "emit_threshold": t.emit_threshold,
                    "group": t.group,
                }
                for t in scene.backend.templates
            ],
        },
        "score": {"combine": "multiplicative"},
        "io": {
            "image": str(scene_path),
            "target": {"bbox": list(scene.target.bbox.as_tuple()),
                       "class_id": scene.target.class_id},
            "out_dir": str(out_dir),
        },
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="scenes", help="directory to populate")
    args = parser.parse_args()
    root = Path(args.out)
    for scene in (single_template_scene(), distractor_scene(), two_class_scene()):
        scene_dir = root / scene.name
        scene_dir.mkdir(parents=True, exist_ok=True)
        scene_path = scene_dir / "scene.png"
        scene.image.save(scene_path)
        config = scene_config(scene, scene_path, scene_dir / "out")
        (scene_dir / "config.json").write_text(json.dumps(config, indent=2) + "\n")
        print(f"wrote {scene_dir}/scene.png and config.json")


if __name__ == "__main__":
    main()
