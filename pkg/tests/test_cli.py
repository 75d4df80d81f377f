import json
import subprocess
import sys

import numpy as np
import pytest

from ipmmap import formats
from ipmmap.cli import main
from ipmmap.metrics import evaluate_map


MINIMAL_SCENE = {
    "field": {"extent_x": 18, "extent_y": 18, "spacing": 6},
    "cameras": [{"camera_id": "front", "kind": "front", "mount_x": 1.2}],
    "seed": 11,
}

NOISY_SCENE = {
    "field": {"extent_x": 12, "extent_y": 12, "spacing": 4},
    "noise": {"pixel_sigma": 0.5},
    "seed": 21,
}


def write_scene(tmp_path, scene, name="scene.json"):
    path = tmp_path / name
    path.write_text(json.dumps(scene))
    return path


def simulate(tmp_path, scene, out="sim", extra=()):
    cfg = write_scene(tmp_path, scene)
    out_dir = tmp_path / out
    rc = main(["simulate", "--config", str(cfg), "--out", str(out_dir), *extra])
    assert rc == 0
    return out_dir


class TestSimulateCommand:
    def test_minimal_scene_writes_four_data_files(self, tmp_path):
        out = simulate(tmp_path, MINIMAL_SCENE)
        names = sorted(p.name for p in out.iterdir())
        assert names == [
            "detections_front.txt",
            "ground_truth.txt",
            "poses.txt",
            "run_manifest.json",
            "true_calibration.txt",
        ]
        # re-readable
        assert formats.read_poses(out / "poses.txt")
        assert formats.read_detections(out / "detections_front.txt")
        cams, rois = formats.read_camera_models(out / "true_calibration.txt")
        assert set(cams) == {"front"} and "front" in rois

    def test_same_seed_byte_identical(self, tmp_path):
        a = simulate(tmp_path, MINIMAL_SCENE, out="a")
        b = simulate(tmp_path, MINIMAL_SCENE, out="b")
        for name in ("poses.txt", "detections_front.txt", "ground_truth.txt",
                     "true_calibration.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_invalid_config_exits_2_with_field_path(self, tmp_path, capsys):
        bad = dict(MINIMAL_SCENE, noise={"dropout": 2.0})
        cfg = write_scene(tmp_path, bad)
        rc = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "noise.dropout" in capsys.readouterr().err

    def test_write_pairs_flag(self, tmp_path):
        out = simulate(tmp_path, MINIMAL_SCENE, out="p", extra=["--write-pairs"])
        pairs = formats.read_point_pairs(out / "pairs_front.txt")
        assert len(pairs) == 10

    def test_manifest_reproducibility_fields(self, tmp_path):
        out = simulate(tmp_path, MINIMAL_SCENE)
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["seed"] == 11
        assert manifest["format_versions"]["poses"] == 1
        assert manifest["parameters"]["scene"]["field"]["spacing"] == 6


def build(tmp_path, sim_dir, out, baseline, cameras="both", extra=()):
    args = [
        "build",
        "--poses", str(sim_dir / "poses.txt"),
        "--out", str(tmp_path / out),
        "--baseline", baseline,
        "--cameras", cameras,
        "--calibration", str(sim_dir / "true_calibration.txt"),
    ]
    for det in sorted(sim_dir.glob("detections_*.txt")):
        args += ["--detections", str(det)]
    rc = main(args + list(extra))
    assert rc == 0
    return tmp_path / out


class TestBuildCommand:
    def test_opt_recovers_truth_on_noiseless_scene(self, tmp_path):
        scene = dict(MINIMAL_SCENE)
        sim = simulate(tmp_path, scene)
        out = build(tmp_path, sim, "opt", "opt", cameras="front")
        est = formats.read_map(out / "map.txt")
        truth = formats.read_ground_truth(sim / "ground_truth.txt")
        report = evaluate_map({m: q for m, (q, _) in est.items()}, truth)
        assert report.rmse < 1e-3
        assert (out / "optimized_calibration.txt").exists()
        assert (out / "run.log").exists()

    def test_cni_with_true_homography_matches_opt(self, tmp_path):
        sim = simulate(tmp_path, MINIMAL_SCENE)
        opt = build(tmp_path, sim, "opt", "opt", cameras="front")
        cni = build(tmp_path, sim, "cni", "cni", cameras="front")
        est_o = formats.read_map(opt / "map.txt")
        est_c = formats.read_map(cni / "map.txt")
        truth = formats.read_ground_truth(sim / "ground_truth.txt")
        r_o = evaluate_map({m: q for m, (q, _) in est_o.items()}, truth).rmse
        r_c = evaluate_map({m: q for m, (q, _) in est_c.items()}, truth).rmse
        assert abs(r_o - r_c) < 1e-3

    def test_homography_calibration_source(self, tmp_path):
        sim = simulate(tmp_path, MINIMAL_SCENE, extra=["--write-pairs"])
        from ipmmap.ipm import estimate_homography_dlt

        pairs = formats.read_point_pairs(sim / "pairs_front.txt")
        h = estimate_homography_dlt(pairs)
        hpath = tmp_path / "front_h.txt"
        formats.write_homography(hpath, h)
        out_dir = tmp_path / "from_h"
        rc = main([
            "build",
            "--detections", str(sim / "detections_front.txt"),
            "--poses", str(sim / "poses.txt"),
            "--homography", f"front={hpath}",
            "--baseline", "cni",
            "--cameras", "front",
            "--out", str(out_dir),
        ])
        assert rc == 0
        est = formats.read_map(out_dir / "map.txt")
        truth = formats.read_ground_truth(sim / "ground_truth.txt")
        report = evaluate_map({m: q for m, (q, _) in est.items()}, truth)
        assert report.rmse < 1e-3

    def test_bad_detections_file_exits_3(self, tmp_path, capsys):
        sim = simulate(tmp_path, MINIMAL_SCENE)
        bad = tmp_path / "bad.txt"
        bad.write_text("0 front 1 2 3\n")
        rc = main([
            "build",
            "--detections", str(bad),
            "--poses", str(sim / "poses.txt"),
            "--calibration", str(sim / "true_calibration.txt"),
            "--baseline", "cni",
            "--out", str(tmp_path / "x"),
        ])
        assert rc == 3
        assert "bad.txt:1" in capsys.readouterr().err

    def test_missing_calibration_exits_2(self, tmp_path):
        sim = simulate(tmp_path, MINIMAL_SCENE)
        rc = main([
            "build",
            "--detections", str(sim / "detections_front.txt"),
            "--poses", str(sim / "poses.txt"),
            "--baseline", "cni",
            "--out", str(tmp_path / "x"),
        ])
        assert rc == 2

    def test_numerical_failure_exits_4(self, monkeypatch, tmp_path, capsys):
        from ipmmap import cli
        from ipmmap.errors import NumericalFailure

        def boom(args):
            raise NumericalFailure("synthetic failure")

        monkeypatch.setattr(cli, "cmd_build", boom)
        parser_args = [
            "build", "--detections", "x", "--poses", "y",
            "--baseline", "cni", "--out", "z",
        ]
        monkeypatch.setattr(
            cli, "build_parser", lambda: _patched_parser(boom, parser_args)
        )
        rc = cli.main(parser_args)
        assert rc == 4


def _patched_parser(func, argv):
    import argparse

    p = argparse.ArgumentParser()
    sub = p.add_subparsers()
    b = sub.add_parser("build")
    for flag in ("--detections", "--poses", "--baseline", "--out"):
        b.add_argument(flag)
    b.set_defaults(func=func)
    return p


class TestEvaluateCommand:
    def test_truth_vs_itself(self, tmp_path):
        sim = simulate(tmp_path, MINIMAL_SCENE)
        truth = formats.read_ground_truth(sim / "ground_truth.txt")
        # write the truth as a map file
        map_path = tmp_path / "perfect_map.txt"
        with open(map_path, "w") as fh:
            for mid, quad in enumerate(truth):
                for k in range(4):
                    fh.write(f"{mid} {k} {float(quad[k,0])!r} {float(quad[k,1])!r} 1\n")
        out = tmp_path / "eval"
        rc = main([
            "evaluate", "--map", str(map_path),
            "--truth", str(sim / "ground_truth.txt"), "--out", str(out),
        ])
        assert rc == 0
        text = (out / "report.txt").read_text()
        assert "corner_rmse_m 0.000000" in text
        assert "mean_iou 1.000000" in text
        assert (out / "error_vs_count.png").exists()
        assert (out / "map_overlay.png").exists()

    def test_uniform_shift_rmse(self, tmp_path):
        sim = simulate(tmp_path, MINIMAL_SCENE)
        truth = formats.read_ground_truth(sim / "ground_truth.txt")
        map_path = tmp_path / "shifted.txt"
        with open(map_path, "w") as fh:
            for mid, quad in enumerate(truth):
                for k in range(4):
                    fh.write(
                        f"{mid} {k} {float(quad[k,0])+0.06!r} "
                        f"{float(quad[k,1])+0.08!r} 1\n"
                    )
        out = tmp_path / "eval_shift"
        rc = main([
            "evaluate", "--map", str(map_path),
            "--truth", str(sim / "ground_truth.txt"),
            "--out", str(out), "--no-figures",
        ])
        assert rc == 0
        assert "corner_rmse_m 0.100000" in (out / "report.txt").read_text()

    def test_cli_matches_api(self, tmp_path):
        sim = simulate(tmp_path, NOISY_SCENE)
        built = build(tmp_path, sim, "built", "opt")
        out = tmp_path / "eval_api"
        rc = main([
            "evaluate", "--map", str(built / "map.txt"),
            "--truth", str(sim / "ground_truth.txt"),
            "--out", str(out), "--no-figures",
        ])
        assert rc == 0
        est = formats.read_map(built / "map.txt")
        truth = formats.read_ground_truth(sim / "ground_truth.txt")
        report = evaluate_map({m: q for m, (q, _) in est.items()}, truth)
        text = (out / "report.txt").read_text()
        assert f"corner_rmse_m {report.rmse:.6f}" in text
        assert f"mean_iou {report.mean_iou:.6f}" in text
        # trace csv recomputation
        lines = (out / "trace.csv").read_text().strip().splitlines()[1:]
        assert len(lines) == len(report.error_trace)


class TestBaselineMatrixCommand:
    def test_matrix_pattern_on_noisy_scene(self, tmp_path):
        cfg = write_scene(tmp_path, NOISY_SCENE)
        out = tmp_path / "matrix"
        rc = main([
            "baseline-matrix", "--config", str(cfg), "--out", str(out),
            "--scenario", "2",
        ])
        assert rc == 0
        rows = {}
        for line in (out / "matrix.csv").read_text().strip().splitlines()[1:]:
            baseline, setup, rmse, iou, markings, status = line.split(",")
            assert status == "ok"
            rows[(baseline, setup)] = (float(rmse), float(iou), int(markings))
        for setup in ("front", "rear", "both"):
            eni, opt, oni = rows[("eni", setup)], rows[("opt", setup)], rows[("oni", setup)]
            assert opt[0] < eni[0] and oni[0] < eni[0]
            assert opt[1] > eni[1] and oni[1] > eni[1]
        # both-camera run observes at least as many markings as either camera
        assert rows[("opt", "both")][2] >= rows[("opt", "front")][2]
        assert rows[("opt", "both")][2] >= rows[("opt", "rear")][2]
        assert (out / "matrix.png").exists()
        assert (out / "matrix.txt").exists()

    def test_scenario_1_uses_cni(self, tmp_path):
        cfg = write_scene(tmp_path, MINIMAL_SCENE)
        out = tmp_path / "matrix1"
        rc = main([
            "baseline-matrix", "--config", str(cfg), "--out", str(out),
            "--scenario", "1",
        ])
        assert rc == 0
        text = (out / "matrix.csv").read_text()
        assert "cni," in text and "eni," not in text
        # rear cells are marked failed (scene has no rear camera), exit still 0
        assert "camera 'rear' missing" in text


class TestConsoleScript:
    def test_entry_point_runs(self):
        proc = subprocess.run(
            [sys.executable, "-m", "ipmmap.cli", "--version"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
