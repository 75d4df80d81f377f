"""Incremental map construction: inverse projection, averaging, triggers.

The naive strategy lifts detected corners through each camera's homography
into the map frame and keeps per-corner running averages. When optimization
is enabled, every new-marking event (and the end of the stream) triggers a
joint solve that refines all corners and each camera's extrinsic, after which
the camera homographies are recomposed.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .association import (
    DetectedMarking,
    QuadTree,
    associate_marking,
    normalize_winding,
)
from .errors import (
    AmbiguousAssociation,
    AtInfinity,
    IpmmapError,
    OutsideROI,
)
from .geometry import CameraModel, PixelPoint, RigidTransform
from .ipm import Homography, RegionOfInterest, apply_ipm, roi_contains
from .optimize import (
    PriorConfig,
    SolverOptions,
    build_problem,
    solve,
    update_camera_from_solution,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VehiclePoseRecord:
    frame: int
    timestamp: float
    pose: RigidTransform


@dataclass(frozen=True)
class DetectionRecord:
    """One detected marking as read from a detections file."""

    frame: int
    camera_id: str
    pixels: np.ndarray  # (4, 2) in detector corner order

    def __post_init__(self):
        object.__setattr__(
            self, "pixels", np.asarray(self.pixels, dtype=float).reshape(4, 2)
        )


@dataclass(frozen=True)
class Observation:
    """Pixel measurement of one marking in one frame."""

    frame: int
    camera_id: str
    pixels: np.ndarray  # (4, 2), detection corner order
    corner_permutation: tuple  # detection corner i observes corner perm[i]


@dataclass
class Marking:
    """A mapped diamond: corner landmarks plus every pixel observation."""

    id: int
    corners: np.ndarray  # (4, 3), z_w = 0
    observations: list = field(default_factory=list)
    corner_sums: np.ndarray = None
    corner_counts: np.ndarray = None

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=float).reshape(4, 3)
        if self.corner_sums is None:
            self.corner_sums = self.corners[:, :2].copy()
        if self.corner_counts is None:
            self.corner_counts = np.ones(4, dtype=int)

    @property
    def center(self) -> np.ndarray:
        return self.corners[:, :2].mean(axis=0)


@dataclass
class CameraSetup:
    """Per-camera pipeline state: gate region, IPM, optional full model."""

    camera_id: str
    homography: Homography
    roi: Optional[RegionOfInterest] = None
    model: Optional[CameraModel] = None
    prior_t0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.prior_t0 is None and self.model is not None:
            self.prior_t0 = np.array(self.model.extrinsic.translation)


@dataclass
class PipelineConfig:
    gate: float = 1.0
    tie_epsilon: float = 0.05
    optimize: bool = False
    opt_every_n_new: int = 1
    final_solve: bool = True
    sigma_pixel: float = 1.0
    sigma_prior: float = 0.05
    solver: SolverOptions = field(default_factory=SolverOptions)
    quadtree_half_extent: float = 32.0


class MapState:
    """The evolving map: markings, center index, pose log, camera states."""

    def __init__(self, cameras: dict, config: PipelineConfig):
        self.markings: dict = {}
        self.index = QuadTree(half_extent=config.quadtree_half_extent)
        self.poses: dict = {}
        self.cameras = cameras
        self.config = config
        self.review_list: list = []
        self.counters: Counter = Counter()
        self.solve_reports: list = []
        self._next_id = 0

    def new_marking(self, detection: DetectedMarking) -> Marking:
        mid = self._next_id
        self._next_id += 1
        corners3 = np.column_stack([detection.corners, np.zeros(4)])
        marking = Marking(mid, corners3)
        marking.observations.append(
            Observation(
                detection.source_frame,
                detection.camera_id,
                detection.pixel_corners,
                (0, 1, 2, 3),
            )
        )
        self.markings[mid] = marking
        self.index.insert(marking.center, mid)
        return marking

    def set_corners(self, mid: int, corners_xy: np.ndarray) -> None:
        """Replace a marking's corners (e.g. from a solve) and re-index it."""
        marking = self.markings[mid]
        old_center = marking.center
        marking.corners[:, :2] = corners_xy
        marking.corners[:, 2] = 0.0
        # subsequent averaging continues from the refined values
        marking.corner_sums = corners_xy * marking.corner_counts[:, None]
        self.index.remove(old_center, mid)
        self.index.insert(marking.center, mid)

    def audit(self, gate: Optional[float] = None) -> list:
        """Post-run consistency report; empty list means clean."""
        gate = self.config.gate if gate is None else gate
        problems = []
        for mid, m in self.markings.items():
            for (pt, other) in self.index.query_radius(m.center, gate):
                if other != mid:
                    problems.append(
                        f"markings {mid} and {other} within gate "
                        f"({np.hypot(*(m.center - np.asarray(pt))):.3f} m)"
                    )
        indexed = {mid: np.asarray(pt) for pt, mid in self.index.items()}
        for mid, m in self.markings.items():
            if mid not in indexed:
                problems.append(f"marking {mid} missing from index")
            elif np.abs(indexed[mid] - m.center).max() > 1e-9:
                problems.append(f"marking {mid} center stale in index")
        return problems


def inverse_project_detection(
    pixels, homography: Homography, roi: Optional[RegionOfInterest], pose: RigidTransform
) -> np.ndarray:
    """Lift four pixel corners through the IPM into the map frame.

    Returns a (4, 3) array with z_w = 0.

    Raises:
        OutsideROI: identifying the first offending corner index.
        AtInfinity: propagated from the homography application.
    """
    pix = np.asarray(pixels, dtype=float).reshape(4, 2)
    out = np.zeros((4, 3))
    r, t = pose.rotation, pose.translation
    for i, (u, v) in enumerate(pix):
        p = PixelPoint(u, v)
        if roi is not None and not roi_contains(roi, p):
            raise OutsideROI(i)
        g = apply_ipm(homography, p)
        # ground-plane restriction of the vehicle pose
        out[i, 0] = r[0, 0] * g.x + r[0, 1] * g.y + t[0]
        out[i, 1] = r[1, 0] * g.x + r[1, 1] * g.y + t[1]
    return out


@dataclass(frozen=True)
class UpdateEvent:
    kind: str  # created | matched | quarantined
    marking_id: Optional[int] = None


def naive_update(
    map_state: MapState, detection: DetectedMarking, pose: VehiclePoseRecord
) -> UpdateEvent:
    """Fold one map-frame detection into the map.

    On an association match the matched marking's corner averages are
    updated; otherwise a new marking is created. The pixel observation is
    recorded either way. Ambiguous associations quarantine the detection on
    the review list instead of guessing.
    """
    if detection.source_frame not in map_state.poses:
        map_state.poses[detection.source_frame] = pose
    cfg = map_state.config
    try:
        res = associate_marking(
            map_state, detection, gate=cfg.gate, tie_epsilon=cfg.tie_epsilon
        )
    except AmbiguousAssociation as err:
        map_state.review_list.append((detection, str(err)))
        map_state.counters["quarantined_ambiguous"] += 1
        return UpdateEvent("quarantined")

    if res.matched is None:
        marking = map_state.new_marking(detection)
        map_state.counters["markings_created"] += 1
        return UpdateEvent("created", marking.id)

    marking = map_state.markings[res.matched]
    perm = res.corner_permutation
    old_center = marking.center
    residual = 0.0
    for i in range(4):
        k = perm[i]
        marking.corner_sums[k] += detection.corners[i]
        marking.corner_counts[k] += 1
        residual += float(
            np.linalg.norm(detection.corners[i] - marking.corners[k, :2])
        )
        marking.corners[k, :2] = marking.corner_sums[k] / marking.corner_counts[k]
    if residual / 4.0 > cfg.gate:
        map_state.counters["high_residual_matches"] += 1
        logger.warning(
            "frame %d camera %s: high corner residual (%.2f m) on marking %d",
            detection.source_frame,
            detection.camera_id,
            residual / 4.0,
            marking.id,
        )
    marking.observations.append(
        Observation(
            detection.source_frame, detection.camera_id, detection.pixel_corners, perm
        )
    )
    map_state.index.remove(old_center, res.matched)
    map_state.index.insert(marking.center, res.matched)
    map_state.counters["matches"] += 1
    return UpdateEvent("matched", res.matched)


def ingest_detection(
    map_state: MapState, record: DetectionRecord, pose: VehiclePoseRecord
) -> Optional[UpdateEvent]:
    """Validate, inverse project and associate one detection record."""
    setup = map_state.cameras.get(record.camera_id)
    if setup is None:
        map_state.counters["unknown_camera"] += 1
        return None
    try:
        corners = inverse_project_detection(
            record.pixels, setup.homography, setup.roi, pose.pose
        )
    except OutsideROI as err:
        map_state.counters["rejected_outside_roi"] += 1
        logger.debug("frame %d: corner %d outside ROI", record.frame, err.corner_index)
        return None
    except AtInfinity:
        map_state.counters["rejected_at_infinity"] += 1
        logger.warning("frame %d: detection maps to infinity", record.frame)
        return None
    order = normalize_winding(corners[:, :2])
    try:
        detection = DetectedMarking(
            corners[order, :2],
            record.pixels[order],
            record.frame,
            record.camera_id,
        )
    except ValueError as err:
        map_state.counters["rejected_degenerate"] += 1
        logger.debug("frame %d: %s", record.frame, err)
        return None
    return naive_update(map_state, detection, pose)


def run_pipeline(detections, poses, cameras: dict, config: PipelineConfig) -> MapState:
    """Process frame-ordered detections against the pose log.

    Args:
        detections: iterable of DetectionRecord, ordered by frame.
        poses: iterable of VehiclePoseRecord.
        cameras: camera_id -> CameraSetup.
        config: pipeline parameters; set config.optimize for joint solving.

    Returns:
        The final MapState (with solve reports when optimization ran).
    """
    map_state = MapState(dict(cameras), config)
    pose_log = {}
    for rec in poses:
        if rec.frame in pose_log:
            logger.warning("duplicate pose for frame %d; keeping first", rec.frame)
            continue
        pose_log[rec.frame] = rec

    if config.optimize:
        for setup in map_state.cameras.values():
            if setup.model is None:
                raise ValueError(
                    f"camera '{setup.camera_id}' needs a full camera model "
                    "for optimization"
                )

    new_since_solve = 0
    obs_since_solve = 0
    for record in sorted(detections, key=lambda d: d.frame):
        pose = pose_log.get(record.frame)
        if pose is None:
            map_state.counters["missing_pose_frames"] += 1
            logger.warning("frame %d has no pose; detection skipped", record.frame)
            continue
        event = ingest_detection(map_state, record, pose)
        if event is None or event.kind == "quarantined":
            continue
        obs_since_solve += 1
        if event.kind == "created":
            new_since_solve += 1
            if config.optimize and new_since_solve >= config.opt_every_n_new:
                _solve_and_refresh(map_state)
                new_since_solve = 0
                obs_since_solve = 0

    if config.optimize and map_state.markings and (
        obs_since_solve > 0 or not map_state.solve_reports
    ):
        # trailing observations since the last trigger still contribute
        if config.final_solve or new_since_solve > 0:
            _solve_and_refresh(map_state)
    return map_state


def _solve_and_refresh(map_state: MapState) -> None:
    cfg = map_state.config
    priors = {
        cid: PriorConfig(
            t0=setup.prior_t0,
            sigma_prior=cfg.sigma_prior,
            initial_rotation=setup.model.extrinsic.rotation,
        )
        for cid, setup in map_state.cameras.items()
        if setup.model is not None
    }
    problem = build_problem(map_state, priors, sigma_pixel=cfg.sigma_pixel)
    extrinsics, corners, report = solve(problem, cfg.solver)
    map_state.solve_reports.append(report)
    for cid, extrinsic in extrinsics.items():
        setup = map_state.cameras[cid]
        model, homography = update_camera_from_solution(setup.model, extrinsic)
        setup.model = model
        setup.homography = homography
    by_marking = {}
    for (mid, k), xy in corners.items():
        by_marking.setdefault(mid, np.zeros((4, 2)))[k] = xy
    for mid, xy in by_marking.items():
        map_state.set_corners(mid, xy)
