"""Command-line pipeline driver.

Subcommands:

* ``simulate``        generate a synthetic scene (poses, detections, truth,
                      calibration files)
* ``build``           run the map builder under a baseline (cni/eni/opt/oni)
* ``evaluate``        score a map against ground truth (reports, CSV, figures)
* ``baseline-matrix`` run the full baseline-by-camera-setup comparison table

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 numerical failure. Log verbosity comes from the IPMMAP_LOG environment
variable (DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    FormatError,
    InvalidSpec,
    IpmmapError,
    NoProgress,
    NumericalFailure,
)
from . import formats
from .geometry import CameraModel
from .ipm import RegionOfInterest, estimate_homography_dlt, homography_from_camera
from .mapbuild import CameraSetup, PipelineConfig, run_pipeline
from .metrics import DEFAULT_CELL, DEFAULT_EVAL_GATE, evaluate_map
from .optimize import SolverOptions
from .simulate import (
    DEFAULT_ENI_ROTATION_DEG,
    DEFAULT_ENI_TRANSLATION_M,
    SceneSpec,
    generate_scene,
    perturb_rig,
    reference_scene,
    render_detections,
    scene_from_dict,
    scene_to_dict,
)

logger = logging.getLogger(__name__)

BASELINES = ("cni", "eni", "opt", "oni")
CAMERA_SETUPS = ("front", "rear", "both")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_NUMERICAL = 4


@dataclasses.dataclass
class RunConfig:
    """Snapshot of one command invocation, serialized into the manifest."""

    mode: str
    inputs: dict
    outputs: dict
    baseline: str = ""
    cameras: str = "both"
    parameters: dict = dataclasses.field(default_factory=dict)
    seed: int = 0

    def manifest(self) -> dict:
        return {
            "tool": "ipmmap",
            "version": __version__,
            "mode": self.mode,
            "baseline": self.baseline,
            "cameras": self.cameras,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "parameters": self.parameters,
            "format_versions": formats.FORMAT_VERSIONS,
        }


def _write_manifest(out_dir: Path, config: RunConfig) -> None:
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(config.manifest(), indent=2, sort_keys=True) + "\n")


def _configure_logging() -> None:
    level = os.environ.get("IPMMAP_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _add_pipeline_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gate", type=float, default=1.0,
                   help="association gate radius in meters")
    p.add_argument("--tie-epsilon", type=float, default=0.05,
                   help="ambiguity margin for association ties, meters")
    p.add_argument("--sigma-pixel", type=float, default=1.0,
                   help="reprojection noise scale, pixels")
    p.add_argument("--sigma-prior", type=float, default=0.05,
                   help="camera translation prior scale, meters")
    p.add_argument("--opt-every", type=int, default=1, metavar="N",
                   help="solve after every N new markings")
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--huber-delta", type=float, default=None, metavar="PX",
                   help="enable a Huber loss at this pixel threshold")


def _pipeline_config(args, optimize: bool) -> PipelineConfig:
    return PipelineConfig(
        gate=args.gate,
        tie_epsilon=args.tie_epsilon,
        optimize=optimize,
        opt_every_n_new=args.opt_every,
        sigma_pixel=args.sigma_pixel,
        sigma_prior=args.sigma_prior,
        solver=SolverOptions(
            max_iterations=args.max_iterations, huber_delta=args.huber_delta
        ),
    )


def _pipeline_params(args) -> dict:
    return {
        "gate": args.gate,
        "tie_epsilon": args.tie_epsilon,
        "sigma_pixel": args.sigma_pixel,
        "sigma_prior": args.sigma_prior,
        "opt_every": args.opt_every,
        "max_iterations": args.max_iterations,
        "huber_delta": args.huber_delta,
    }


def _load_scene(args) -> SceneSpec:
    if args.config is None:
        return reference_scene()
    path = Path(args.config)
    try:
        data = json.loads(path.read_text())
    except OSError as err:
        raise InvalidSpec(str(path), f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise InvalidSpec(str(path), f"not valid JSON: {err}") from err
    return scene_from_dict(data)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    spec = _load_scene(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth, poses = generate_scene(spec)
    detections = render_detections(truth, poses, spec)

    outputs = {}
    formats.write_poses(out / "poses.txt", poses)
    outputs["poses"] = "poses.txt"
    by_camera = {cid: [] for cid in truth.cameras}
    for det in detections:
        by_camera[det.camera_id].append(det)
    for cid, dets in by_camera.items():
        name = f"detections_{cid}.txt"
        formats.write_detections(out / name, dets)
        outputs[f"detections_{cid}"] = name
    formats.write_ground_truth(out / "ground_truth.txt", truth.marking_corners)
    outputs["ground_truth"] = "ground_truth.txt"
    formats.write_camera_models(
        out / "true_calibration.txt",
        [tc.model for tc in truth.cameras.values()],
        {cid: tc.roi for cid, tc in truth.cameras.items()},
    )
    outputs["true_calibration"] = "true_calibration.txt"

    if args.write_pairs:
        for cid, tc in truth.cameras.items():
            name = f"pairs_{cid}.txt"
            formats.write_point_pairs(out / name, tc.calibration_pairs)
            outputs[f"pairs_{cid}"] = name
    if args.write_perturbed:
        rng = np.random.default_rng(args.perturb_seed)
        perturbed = perturb_rig(
            {cid: tc.model for cid, tc in truth.cameras.items()},
            args.perturb_rotation_deg,
            args.perturb_translation_m,
            rng,
        )
        formats.write_camera_models(
            out / "perturbed_calibration.txt",
            [perturbed[cid] for cid in sorted(perturbed)],
            {cid: tc.roi for cid, tc in truth.cameras.items()},
        )
        outputs["perturbed_calibration"] = "perturbed_calibration.txt"

    config = RunConfig(
        mode="simulate",
        inputs={"config": args.config or "<reference scene>"},
        outputs=outputs,
        seed=spec.seed,
        parameters={"scene": scene_to_dict(spec)},
    )
    _write_manifest(out, config)
    print(f"simulated {len(truth.marking_corners)} markings, "
          f"{len(poses)} poses, {len(detections)} detections -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# build


def _parse_per_camera(values):
    out = {}
    for item in values or []:
        cam, sep, path = item.partition("=")
        if not sep or not cam or not path:
            raise InvalidSpec("--pairs/--homography", f"expected CAM=PATH, got '{item}'")
        out[cam] = Path(path)
    return out


def _load_setups(args) -> dict:
    """Assemble per-camera pipeline state from whichever calibration source."""
    setups = {}
    if args.calibration:
        cameras, rois = formats.read_camera_models(args.calibration)
        for cid, model in cameras.items():
            setups[cid] = CameraSetup(
                cid, homography_from_camera(model), rois.get(cid), model
            )
    for cid, path in _parse_per_camera(args.pairs).items():
        pairs = formats.read_point_pairs(path)
        homography = estimate_homography_dlt(pairs)
        roi = RegionOfInterest.from_points([p.pixel for p in pairs])
        setups[cid] = CameraSetup(cid, homography, roi, None)
    for cid, path in _parse_per_camera(args.homography).items():
        setups[cid] = CameraSetup(cid, formats.read_homography(path), None, None)
    if not setups:
        raise InvalidSpec(
            "--calibration", "need --calibration, --pairs or --homography"
        )
    return setups


def _select_cameras(setups: dict, selection: str) -> dict:
    if selection == "both":
        return setups
    if selection not in setups:
        raise InvalidSpec("--cameras", f"camera '{selection}' not in calibration")
    return {selection: setups[selection]}


def _write_run_log(out: Path, state) -> None:
    with open(out / "run.log", "w") as fh:
        fh.write("# pipeline counters\n")
        for key in sorted(state.counters):
            fh.write(f"counter {key} {state.counters[key]}\n")
        fh.write(f"markings {len(state.markings)}\n")
        fh.write(f"quarantined {len(state.review_list)}\n")
        for i, report in enumerate(state.solve_reports):
            fh.write(f"# optimization {i}\n")
            fh.write(report.summary_line() + "\n")
            fh.write(
                "trace " + " ".join(f"{c:.6e}" for c in report.cost_trace) + "\n"
            )


def cmd_build(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    poses = formats.read_poses(args.poses)
    detections = []
    for path in args.detections:
        detections.extend(formats.read_detections(path))
    setups = _select_cameras(_load_setups(args), args.cameras)

    if args.perturb_rotation_deg or args.perturb_translation_m:
        rng = np.random.default_rng(args.perturb_seed)
        models = {
            cid: s.model for cid, s in setups.items() if s.model is not None
        }
        if len(models) != len(setups):
            raise InvalidSpec(
                "--perturb-rotation-deg",
                "perturbation needs full camera models (--calibration)",
            )
        perturbed = perturb_rig(
            models,
            args.perturb_rotation_deg or 0.0,
            args.perturb_translation_m or 0.0,
            rng,
        )
        for cid, model in perturbed.items():
            setups[cid].model = model
            setups[cid].homography = homography_from_camera(model)
            setups[cid].prior_t0 = np.array(model.extrinsic.translation)

    optimize = args.baseline == "opt"
    if optimize:
        missing = [cid for cid, s in setups.items() if s.model is None]
        if missing:
            raise InvalidSpec(
                "--baseline", f"opt needs camera models for {missing} "
                "(supply --calibration)"
            )
    config = _pipeline_config(args, optimize)
    state = run_pipeline(detections, poses, setups, config)

    formats.write_map(out / "map.txt", state)
    _write_run_log(out, state)
    outputs = {"map": "map.txt", "log": "run.log"}
    if optimize:
        formats.write_camera_models(
            out / "optimized_calibration.txt",
            [s.model for s in state.cameras.values()],
            {cid: s.roi for cid, s in state.cameras.items() if s.roi is not None},
        )
        outputs["optimized_calibration"] = "optimized_calibration.txt"

    run_config = RunConfig(
        mode="build",
        baseline=args.baseline,
        cameras=args.cameras,
        inputs={
            "poses": str(args.poses),
            "detections": [str(p) for p in args.detections],
            "calibration": str(args.calibration) if args.calibration else None,
            "pairs": args.pairs or [],
            "homography": args.homography or [],
        },
        outputs=outputs,
        parameters={
            **_pipeline_params(args),
            "perturb_rotation_deg": args.perturb_rotation_deg,
            "perturb_translation_m": args.perturb_translation_m,
            "perturb_seed": args.perturb_seed,
        },
        seed=args.perturb_seed,
    )
    _write_manifest(out, run_config)
    print(
        f"built map with {len(state.markings)} markings "
        f"({args.baseline}, cameras={args.cameras}) -> {out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _write_report_text(path, report, cell, gate) -> None:
    with open(path, "w") as fh:
        fh.write("# map evaluation report\n")
        fh.write(f"matched_markings {len(report.matched)}\n")
        fh.write(f"unmatched_truth {len(report.unmatched_truth)}\n")
        fh.write(f"unmatched_estimated {len(report.unmatched_estimated)}\n")
        fh.write(f"corner_rmse_m {report.rmse:.6f}\n")
        fh.write(f"mean_iou {report.mean_iou:.6f}\n")
        fh.write(f"cell_m {cell}\n")
        fh.write(f"match_gate_m {gate}\n")
        if report.unmatched_truth:
            fh.write(
                "unmatched_truth_ids "
                + " ".join(str(i) for i in report.unmatched_truth) + "\n"
            )
        if report.unmatched_estimated:
            fh.write(
                "unmatched_estimated_ids "
                + " ".join(str(i) for i in report.unmatched_estimated) + "\n"
            )


def _write_report_csv(path, report) -> None:
    with open(path, "w") as fh:
        fh.write(
            "marking_id,truth_index,center_distance_m,"
            "e0_m,e1_m,e2_m,e3_m,mean_error_m,iou\n"
        )
        for row in report.matched:
            errs = ",".join(f"{e:.9f}" for e in row.corner_errors)
            fh.write(
                f"{row.estimated_id},{row.truth_index},"
                f"{row.center_distance:.9f},{errs},"
                f"{row.mean_error:.9f},{row.iou:.6f}\n"
            )


def _write_trace_csv(path, report) -> None:
    with open(path, "w") as fh:
        fh.write("marking_count,marking_mean_error_m,cumulative_mean_error_m\n")
        for count, err, cum in report.error_trace:
            fh.write(f"{count},{err:.9f},{cum:.9f}\n")


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    estimated = formats.read_map(args.map)
    truth = formats.read_ground_truth(args.truth)
    report = evaluate_map(
        {mid: quad for mid, (quad, _) in estimated.items()},
        truth,
        gate=args.gate,
        cell=args.cell,
    )
    _write_report_text(out / "report.txt", report, args.cell, args.gate)
    _write_report_csv(out / "per_marking.csv", report)
    _write_trace_csv(out / "trace.csv", report)
    outputs = {
        "report": "report.txt",
        "per_marking": "per_marking.csv",
        "trace": "trace.csv",
    }
    if not args.no_figures:
        from . import plots

        plots.save_error_trace(report, out / "error_vs_count.png")
        plots.save_map_overlay(
            [quad for quad, _ in estimated.values()],
            truth,
            out / "map_overlay.png",
        )
        outputs["error_figure"] = "error_vs_count.png"
        outputs["overlay_figure"] = "map_overlay.png"

    config = RunConfig(
        mode="evaluate",
        inputs={"map": str(args.map), "truth": str(args.truth)},
        outputs=outputs,
        parameters={"cell": args.cell, "gate": args.gate},
    )
    _write_manifest(out, config)
    print(
        f"evaluated {len(report.matched)} markings: "
        f"RMSE {report.rmse:.4f} m, mean IoU {report.mean_iou:.3f} -> {out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# baseline matrix


def _matrix_cell(
    detections, poses, setups, args, baseline, optimize
):
    config = _pipeline_config(args, optimize)
    return run_pipeline(detections, poses, setups, config)


def cmd_baseline_matrix(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    data_dir = Path(args.data) if args.data else out / "data"
    if not (data_dir / "poses.txt").exists():
        sim_args = argparse.Namespace(
            config=args.config,
            out=data_dir,
            write_pairs=False,
            write_perturbed=False,
            perturb_seed=0,
            perturb_rotation_deg=DEFAULT_ENI_ROTATION_DEG,
            perturb_translation_m=DEFAULT_ENI_TRANSLATION_M,
        )
        cmd_simulate(sim_args)

    poses = formats.read_poses(data_dir / "poses.txt")
    cameras, rois = formats.read_camera_models(data_dir / "true_calibration.txt")
    detections = []
    for cid in cameras:
        detections.extend(
            formats.read_detections(data_dir / f"detections_{cid}.txt")
        )
    truth = formats.read_ground_truth(data_dir / "ground_truth.txt")

    rng = np.random.default_rng(args.perturb_seed)
    perturbed = perturb_rig(
        cameras, args.perturb_rotation_deg, args.perturb_translation_m, rng
    )
    formats.write_camera_models(
        out / "perturbed_calibration.txt",
        [perturbed[cid] for cid in sorted(perturbed)],
        rois,
    )

    naive_label = "cni" if args.scenario == 1 else "eni"
    naive_models = cameras if args.scenario == 1 else perturbed
    start_models = cameras if args.scenario == 1 else perturbed

    def fresh_setups(models):
        return {
            cid: CameraSetup(
                cid, homography_from_camera(m), rois.get(cid), m
            )
            for cid, m in models.items()
        }

    cells = {}
    order = [naive_label, "opt", "oni"]
    for setup_name in CAMERA_SETUPS:
        selected = list(cameras) if setup_name == "both" else [setup_name]
        if any(cid not in cameras for cid in selected):
            for b in order:
                cells[(b, setup_name)] = {"error": f"camera '{setup_name}' missing"}
            continue
        dets = [d for d in detections if d.camera_id in selected]
        optimized_models = None
        for baseline in order:
            cell_dir = out / "cells" / f"{baseline}_{setup_name}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            try:
                if baseline == "opt":
                    setups = {
                        cid: s
                        for cid, s in fresh_setups(start_models).items()
                        if cid in selected
                    }
                    state = _matrix_cell(dets, poses, setups, args, baseline, True)
                    optimized_models = {
                        cid: s.model for cid, s in state.cameras.items()
                    }
                elif baseline == "oni":
                    if optimized_models is None:
                        raise IpmmapError("opt cell failed; no optimized IPM")
                    setups = {
                        cid: s
                        for cid, s in fresh_setups(optimized_models).items()
                        if cid in selected
                    }
                    state = _matrix_cell(dets, poses, setups, args, baseline, False)
                else:
                    setups = {
                        cid: s
                        for cid, s in fresh_setups(naive_models).items()
                        if cid in selected
                    }
                    state = _matrix_cell(dets, poses, setups, args, baseline, False)
                formats.write_map(cell_dir / "map.txt", state)
                _write_run_log(cell_dir, state)
                report = evaluate_map(state, truth, gate=args.gate_eval, cell=args.cell)
                cells[(baseline, setup_name)] = {
                    "rmse": report.rmse,
                    "iou": report.mean_iou,
                    "markings": len(state.markings),
                    "unmatched_truth": len(report.unmatched_truth),
                }
            except IpmmapError as err:
                logger.error("cell %s/%s failed: %s", baseline, setup_name, err)
                cells[(baseline, setup_name)] = {"error": str(err)}

    _write_matrix_outputs(out, cells, order)
    config = RunConfig(
        mode="baseline-matrix",
        inputs={"config": args.config, "data": str(data_dir)},
        outputs={
            "table": "matrix.txt",
            "csv": "matrix.csv",
            "figure": "matrix.png",
            "perturbed_calibration": "perturbed_calibration.txt",
        },
        parameters={
            **_pipeline_params(args),
            "scenario": args.scenario,
            "perturb_rotation_deg": args.perturb_rotation_deg,
            "perturb_translation_m": args.perturb_translation_m,
            "perturb_seed": args.perturb_seed,
            "cell": args.cell,
            "gate_eval": args.gate_eval,
        },
        seed=args.perturb_seed,
    )
    _write_manifest(out, config)
    print((out / "matrix.txt").read_text(), end="")
    return EXIT_OK


def _format_cell(cell) -> str:
    if "error" in cell:
        return "FAIL"
    return f"{cell['rmse']:.3f}/{cell['iou']:.2f}"


def _write_matrix_outputs(out: Path, cells: dict, order) -> None:
    with open(out / "matrix.txt", "w") as fh:
        fh.write("# corner RMSE [m] / mean IoU per baseline and camera setup\n")
        header = f"{'baseline':>10}" + "".join(f"{s:>14}" for s in CAMERA_SETUPS)
        fh.write(header + "\n")
        for baseline in order:
            row = f"{baseline.upper():>10}"
            for setup in CAMERA_SETUPS:
                row += f"{_format_cell(cells.get((baseline, setup), {'error': 'missing'})):>14}"
            fh.write(row + "\n")
        failures = [
            f"# {b}/{s}: {c['error']}"
            for (b, s), c in sorted(cells.items())
            if "error" in c
        ]
        for line in failures:
            fh.write(line + "\n")
    with open(out / "matrix.csv", "w") as fh:
        fh.write("baseline,camera_setup,rmse_m,mean_iou,markings,status\n")
        for (baseline, setup), cell in sorted(cells.items()):
            if "error" in cell:
                fh.write(f"{baseline},{setup},,,,{cell['error']}\n")
            else:
                fh.write(
                    f"{baseline},{setup},{cell['rmse']:.9f},{cell['iou']:.6f},"
                    f"{cell['markings']},ok\n"
                )
    from . import plots

    plots.save_matrix_chart(cells, out / "matrix.png")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ipmmap",
        description="Marking-level HD map construction with IPM self-calibration",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scene")
    p.add_argument("--config", help="scene JSON (defaults to the reference scene)")
    p.add_argument("--out", required=True)
    p.add_argument("--write-pairs", action="store_true",
                   help="also write per-camera calibration point-pair files")
    p.add_argument("--write-perturbed", action="store_true",
                   help="also write a different-UGV calibration file")
    p.add_argument("--perturb-rotation-deg", type=float,
                   default=DEFAULT_ENI_ROTATION_DEG)
    p.add_argument("--perturb-translation-m", type=float,
                   default=DEFAULT_ENI_TRANSLATION_M)
    p.add_argument("--perturb-seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build", help="build a map from detections and poses")
    p.add_argument("--detections", action="append", required=True,
                   help="detections file (repeatable)")
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", choices=BASELINES, default="opt")
    p.add_argument("--cameras", default="both",
                   help="front, rear, both, or any camera id")
    p.add_argument("--calibration", help="camera-model file")
    p.add_argument("--pairs", action="append", metavar="CAM=PATH",
                   help="calibration point pairs per camera")
    p.add_argument("--homography", action="append", metavar="CAM=PATH",
                   help="3x3 homography file per camera")
    p.add_argument("--perturb-rotation-deg", type=float, default=0.0,
                   help="perturb the calibration in place (ENI-style)")
    p.add_argument("--perturb-translation-m", type=float, default=0.0)
    p.add_argument("--perturb-seed", type=int, default=0)
    _add_pipeline_args(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("evaluate", help="score a map against ground truth")
    p.add_argument("--map", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cell", type=float, default=DEFAULT_CELL,
                   help="IoU raster cell size, meters")
    p.add_argument("--gate", type=float, default=DEFAULT_EVAL_GATE,
                   help="truth-matching gate, meters")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "baseline-matrix",
        help="run {CNI|ENI, Opt, ONI} x {front, rear, both} on one scene",
    )
    p.add_argument("--config", help="scene JSON (defaults to the reference scene)")
    p.add_argument("--data", help="reuse an existing simulated data directory")
    p.add_argument("--out", required=True)
    p.add_argument("--scenario", type=int, choices=(1, 2), default=2,
                   help="1: calibrated naive (CNI); 2: estimated naive (ENI)")
    p.add_argument("--perturb-rotation-deg", type=float,
                   default=DEFAULT_ENI_ROTATION_DEG)
    p.add_argument("--perturb-translation-m", type=float,
                   default=DEFAULT_ENI_TRANSLATION_M)
    p.add_argument("--perturb-seed", type=int, default=0)
    p.add_argument("--cell", type=float, default=DEFAULT_CELL)
    p.add_argument("--gate-eval", type=float, default=DEFAULT_EVAL_GATE)
    _add_pipeline_args(p)
    p.set_defaults(func=cmd_baseline_matrix)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidSpec as err:
        print(f"ipmmap: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as err:
        print(f"ipmmap: data format error: {err}", file=sys.stderr)
        return EXIT_FORMAT
    except (NumericalFailure, NoProgress) as err:
        print(f"ipmmap: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
