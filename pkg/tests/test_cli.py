import hashlib
import json
import sys

import jsonschema
import numpy as np
import pytest

from bsed import cli
from bsed.mapfile import read_map
from bsed.scenes import distractor_scene, single_template_scene

# sha256 of attribution.bsedmap for the pinned explain config below; frozen
# from the first run (IEEE-754, fixed-order reductions: platform-stable)
GOLDEN_EXPLAIN_SHA256 = "f434da1f01ace9a72cff962962e436bf60bda4d909b4d40678c7f79621091050"


def write_scene_config(tmp_path, scene, engine=None, extra=None):
    scene_path = tmp_path / "scene.png"
    scene.image.save(scene_path)
    cfg = {
        "engine": engine or {"layers": 2, "masks_per_layer": 400,
                             "patch_edge": 16, "seed": 5},
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
            "out_dir": str(tmp_path / "out"),
        },
    }
    if extra:
        cfg.update(extra)
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg, indent=2))
    return cfg_path


def run_cli(*argv):
    return cli.main([*argv])


class TestExplain:
    def test_outputs_and_determinism(self, tmp_path):
        cfg = write_scene_config(tmp_path, single_template_scene())
        out = tmp_path / "out"
        assert run_cli("explain", "--config", str(cfg), "--quiet", "--workers", "1") == 0
        first = (out / "attribution.bsedmap").read_bytes()
        assert (out / "heatmap.png").exists()
        stats = json.loads((out / "stats.json").read_text())
        assert stats["sum_pos"] > 0
        assert run_cli("explain", "--config", str(cfg), "--quiet", "--workers", "3") == 0
        assert (out / "attribution.bsedmap").read_bytes() == first
        digest = hashlib.sha256(first).hexdigest()
        assert digest == GOLDEN_EXPLAIN_SHA256

    def test_missing_image_io_error(self, tmp_path, capsys):
        cfg = write_scene_config(tmp_path, single_template_scene())
        data = json.loads(cfg.read_text())
        data["io"]["image"] = str(tmp_path / "nope.png")
        cfg.write_text(json.dumps(data))
        code = run_cli("explain", "--config", str(cfg), "--quiet")
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert code == 2
        assert err["error"]["kind"] == "io"

    def test_drise_dispatch(self, tmp_path):
        cfg = write_scene_config(tmp_path, single_template_scene())
        assert run_cli("explain", "--config", str(cfg), "--quiet",
                       "--method", "drise") == 0
        amap = read_map(tmp_path / "out" / "attribution.bsedmap")
        assert amap.values.max() > 0  # raw weighted sum is strictly positive

    def test_emit_layers(self, tmp_path):
        cfg = write_scene_config(tmp_path, single_template_scene())
        assert run_cli("explain", "--config", str(cfg), "--quiet",
                       "--layers", "3", "--emit-layers") == 0
        for k in (1, 2, 3):
            assert (tmp_path / "out" / f"layer_{k}.bsedmap").exists()

    def test_flag_overrides_config(self, tmp_path):
        cfg = write_scene_config(tmp_path, single_template_scene())
        assert run_cli("explain", "--config", str(cfg), "--quiet",
                       "--masks", "64", "--seed", "9") == 0
        # rerun with identical overrides matches; different seed differs
        first = (tmp_path / "out" / "attribution.bsedmap").read_bytes()
        assert run_cli("explain", "--config", str(cfg), "--quiet",
                       "--masks", "64", "--seed", "9") == 0
        assert (tmp_path / "out" / "attribution.bsedmap").read_bytes() == first
        assert run_cli("explain", "--config", str(cfg), "--quiet",
                       "--masks", "64", "--seed", "10") == 0
        assert (tmp_path / "out" / "attribution.bsedmap").read_bytes() != first


class TestEvaluate:
    def test_report_and_csv(self, tmp_path):
        cfg = write_scene_config(tmp_path, single_template_scene())
        assert run_cli("explain", "--config", str(cfg), "--quiet") == 0
        assert run_cli("evaluate", "--config", str(cfg), "--quiet",
                       "--steps", "20", "--csv") == 0
        report = json.loads((tmp_path / "out" / "evaluation.json").read_text())
        assert 0.0 <= report["epg"] <= 1.0
        assert report["insertion"]["auc"] > report["deletion"]["auc"]
        assert len(report["deletion"]["points"]) == 21
        deletion_csv = (tmp_path / "out" / "deletion.csv").read_text().splitlines()
        assert deletion_csv[0] == "fraction,score"
        assert len(deletion_csv) == 22

    def test_missing_map_io_error(self, tmp_path, capsys):
        cfg = write_scene_config(tmp_path, single_template_scene())
        code = run_cli("evaluate", "--config", str(cfg), "--quiet")
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert code == 2
        assert err["error"]["kind"] == "io"


class TestAxioms:
    def test_report_validates_against_schema(self, tmp_path):
        cfg = write_scene_config(tmp_path, single_template_scene())
        assert run_cli("axioms", "--config", str(cfg), "--quiet") == 0
        report = json.loads((tmp_path / "out" / "axioms.json").read_text())
        schema_path = (
            __import__("pathlib").Path(cli.__file__).parent
            / "schemas" / "axioms_report.schema.json")
        jsonschema.validate(report, json.loads(schema_path.read_text()))
        assert report["linearity"]["max_residual"] < 1e-9


class TestCorrect:
    def test_trace_artifacts(self, tmp_path):
        cfg = write_scene_config(
            tmp_path, distractor_scene(),
            engine={"layers": 4, "masks_per_layer": 800, "patch_edge": 16, "seed": 0})
        assert run_cli("correct", "--config", str(cfg), "--quiet", "--step", "64") == 0
        out = tmp_path / "out"
        rows = (out / "trace.csv").read_text().splitlines()
        assert rows[0] == "step,masked_count,score_primary,score_rival"
        scores = [float(r.split(",")[2]) for r in rows[1:]]
        assert max(scores) > scores[0]
        assert (out / "corrected.png").exists()
        final = json.loads((out / "detections.json").read_text())
        assert final["masked_count"] > 0


class TestCompare:
    def test_layer_sweep_report(self, tmp_path):
        cfg = write_scene_config(tmp_path, single_template_scene())
        assert run_cli("compare", "--config", str(cfg), "--quiet",
                       "--layers-list", "1,2", "--steps", "20") == 0
        out = tmp_path / "out"
        report = json.loads((out / "compare.json").read_text())
        assert set(report) == {"layers_1", "layers_2", "drise"}
        for entry in report.values():
            assert set(entry) == {"epg", "deletion_auc", "insertion_auc"}
        assert (out / "side_by_side.png").exists()
        first = (out / "compare.json").read_bytes()
        assert run_cli("compare", "--config", str(cfg), "--quiet",
                       "--layers-list", "1,2", "--steps", "20") == 0
        assert (out / "compare.json").read_bytes() == first

    def test_single_method(self, tmp_path):
        cfg = write_scene_config(tmp_path, single_template_scene())
        assert run_cli("compare", "--config", str(cfg), "--quiet",
                       "--layers-list", "2", "--no-drise", "--steps", "10") == 0
        report = json.loads((tmp_path / "out" / "compare.json").read_text())
        assert list(report) == ["layers_2"]


class TestOracle:
    def test_exact_report(self, tmp_path):
        cfg = write_scene_config(
            tmp_path, single_template_scene(),
            engine={"layers": 4, "masks_per_layer": 10, "patch_edge": 32, "seed": 0})
        assert run_cli("oracle", "--config", str(cfg), "--quiet") == 0
        report = json.loads((tmp_path / "out" / "oracle.json").read_text())
        assert report["cells"] == [2, 2]
        assert report["axiom_residuals"]["efficiency"] < 1e-9
        assert report["axiom_residuals"]["recombination"] < 1e-12
        # the box puts a 16x16 painted quadrant in each of the four 32px
        # cells of this additive game: attribution 256/1024 per cell
        attrs = np.array(report["attributions"]).reshape(2, 2)
        np.testing.assert_allclose(attrs, 0.25, atol=1e-9)
        assert report["gaps"] is not None
        for layer_entry in report["gaps"]:
            assert all(abs(g) < 1e-9 for g in layer_entry["gaps"])


class TestSubprocessEntry:
    def test_module_invocation(self, tmp_path):
        import subprocess

        cfg = write_scene_config(tmp_path, single_template_scene(),
                                 engine={"layers": 1, "masks_per_layer": 50,
                                         "patch_edge": 16, "seed": 1})
        proc = subprocess.run(
            [sys.executable, "-m", "bsed.cli", "explain", "--config", str(cfg),
             "--quiet"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "out" / "attribution.bsedmap").exists()
