"""Synthetic scenes: diamond-marking fields, trajectories, camera rigs.

Stands in for real survey data. Everything is generated deterministically
from the scene seed; each emitted detection is additionally reproducible from
(seed, frame, camera index, marking id), so streams are replayable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InvalidSpec
from .geometry import (
    CameraModel,
    GroundPoint,
    Intrinsics,
    MapPoint,
    RigidTransform,
    axis_angle_to_matrix,
    project,
)
from .ipm import (
    Homography,
    PointPair,
    RegionOfInterest,
    homography_from_camera,
    roi_contains_array,
)
from .mapbuild import DetectionRecord, VehiclePoseRecord

# camera->vehicle rotations for the two mounting directions (camera x right,
# y down, z forward; vehicle x forward, y left, z up)
FRONT_MOUNT = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
REAR_MOUNT = np.array([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])

# default "different UGV" miscalibration used by the ENI baseline
DEFAULT_ENI_ROTATION_DEG = 5.0
DEFAULT_ENI_TRANSLATION_M = 0.25


@dataclass(frozen=True)
class CameraSpec:
    """One rig camera: mounting pose, pinhole intrinsics, usable ground window."""

    camera_id: str = "front"
    kind: str = "front"  # front | rear
    mount_x: float = 1.2
    mount_y: float = 0.0
    height: float = 3.2
    # downward tilt of the optical axis; None centers the ground window
    pitch_deg: Optional[float] = None
    fx: float = 700.0
    fy: float = 700.0
    cx: float = 640.0
    cy: float = 360.0
    width: int = 1280
    height_px: int = 720
    # ground window along the viewing direction, measured from the camera foot
    window_near: float = 2.0
    window_far: float = 4.0
    window_half_width: float = 2.0
    calib_cols: int = 5
    calib_rows: int = 2


@dataclass(frozen=True)
class FieldSpec:
    """Diamond markings on a regular grid inside a rectangular field."""

    extent_x: float = 20.0
    extent_y: float = 20.0
    spacing: float = 4.0
    half_diag_a: float = 0.25
    half_diag_b: float = 0.25


@dataclass(frozen=True)
class TrajectorySpec:
    pattern: str = "cross"  # lawnmower | cross | waypoints
    speed: float = 2.4
    frame_rate: float = 10.0
    lane_spacing: Optional[float] = None  # defaults to the marking spacing
    margin: float = 6.2  # overshoot past the field edge, meters
    waypoints: Optional[tuple] = None  # ((x, y), ...) when pattern == waypoints


@dataclass(frozen=True)
class NoiseSpec:
    pixel_sigma: float = 0.0
    dropout: float = 0.0
    pose_sigma_xy: float = 0.0
    pose_sigma_yaw: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    # the attribute named `field` shadows dataclasses.field below it
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    cameras: tuple = (
        CameraSpec(),
        CameraSpec(camera_id="rear", kind="rear", mount_x=-1.2),
    )
    seed: int = 0
    field: FieldSpec = field(default_factory=FieldSpec)


def validate_spec(spec: SceneSpec) -> None:
    """Raise InvalidSpec with a dotted field path on the first bad field."""
    f = spec.field
    if f.extent_x <= 0 or f.extent_y <= 0:
        raise InvalidSpec("field.extent_x", "field extents must be positive")
    if f.spacing <= 0:
        raise InvalidSpec("field.spacing", "grid spacing must be positive")
    if f.half_diag_a <= 0 or f.half_diag_b <= 0:
        raise InvalidSpec("field.half_diag_a", "half-diagonals must be positive")
    if f.spacing <= 2.0 * max(f.half_diag_a, f.half_diag_b):
        raise InvalidSpec(
            "field.spacing", "spacing must exceed twice the larger half-diagonal"
        )
    t = spec.trajectory
    if t.pattern not in ("lawnmower", "cross", "waypoints"):
        raise InvalidSpec("trajectory.pattern", f"unknown pattern '{t.pattern}'")
    if t.speed <= 0:
        raise InvalidSpec("trajectory.speed", "speed must be positive")
    if t.frame_rate <= 0:
        raise InvalidSpec("trajectory.frame_rate", "frame rate must be positive")
    if t.pattern == "waypoints" and (t.waypoints is None or len(t.waypoints) < 2):
        raise InvalidSpec("trajectory.waypoints", "need at least 2 waypoints")
    if not spec.cameras:
        raise InvalidSpec("cameras", "need at least one camera")
    seen = set()
    for i, c in enumerate(spec.cameras):
        path = f"cameras[{i}]"
        if c.camera_id in seen:
            raise InvalidSpec(f"{path}.camera_id", f"duplicate id '{c.camera_id}'")
        seen.add(c.camera_id)
        if c.kind not in ("front", "rear"):
            raise InvalidSpec(f"{path}.kind", f"unknown kind '{c.kind}'")
        if c.height <= 0:
            raise InvalidSpec(f"{path}.height", "camera height must be positive")
        if c.fx <= 0 or c.fy <= 0:
            raise InvalidSpec(f"{path}.fx", "focal lengths must be positive")
        if c.width <= 0 or c.height_px <= 0:
            raise InvalidSpec(f"{path}.width", "image size must be positive")
        if not (0.0 < c.window_near < c.window_far):
            raise InvalidSpec(
                f"{path}.window_near", "need 0 < window_near < window_far"
            )
        if c.window_half_width <= 0:
            raise InvalidSpec(f"{path}.window_half_width", "must be positive")
        if c.calib_cols * c.calib_rows < 4 or c.calib_rows < 2 or c.calib_cols < 2:
            raise InvalidSpec(f"{path}.calib_cols", "calibration grid too small")
    n = spec.noise
    if n.pixel_sigma < 0 or n.pose_sigma_xy < 0 or n.pose_sigma_yaw < 0:
        raise InvalidSpec("noise.pixel_sigma", "noise sigmas must be >= 0")
    if not (0.0 <= n.dropout <= 1.0):
        raise InvalidSpec("noise.dropout", "dropout must be in [0, 1]")


def camera_pitch(cspec: CameraSpec) -> float:
    """Downward tilt in radians; defaults to centering the ground window."""
    if cspec.pitch_deg is not None:
        return math.radians(cspec.pitch_deg)
    near_angle = math.atan2(cspec.height, cspec.window_near)
    far_angle = math.atan2(cspec.height, cspec.window_far)
    return 0.5 * (near_angle + far_angle)


def make_camera_model(cspec: CameraSpec) -> CameraModel:
    """True camera model from a rig spec."""
    mount = FRONT_MOUNT if cspec.kind == "front" else REAR_MOUNT
    pitch = camera_pitch(cspec)
    rotation = mount @ axis_angle_to_matrix([-pitch, 0.0, 0.0])
    translation = np.array([cspec.mount_x, cspec.mount_y, cspec.height])
    return CameraModel(
        Intrinsics(cspec.fx, cspec.fy, cspec.cx, cspec.cy),
        RigidTransform(rotation, translation),
        image_size=(cspec.width, cspec.height_px),
        camera_id=cspec.camera_id,
    )


def calibration_window(cspec: CameraSpec) -> np.ndarray:
    """Vehicle-frame ground grid covering the camera's usable window."""
    direction = 1.0 if cspec.kind == "front" else -1.0
    xs = cspec.mount_x + direction * np.linspace(
        cspec.window_near, cspec.window_far, cspec.calib_cols
    )
    ys = cspec.mount_y + np.linspace(
        -cspec.window_half_width, cspec.window_half_width, cspec.calib_rows
    )
    return np.array([(x, y) for x in xs for y in ys])


@dataclass
class TrueCamera:
    """Ground-truth state of one rig camera."""

    model: CameraModel
    homography: Homography
    roi: RegionOfInterest
    calibration_pairs: list


@dataclass
class GroundTruth:
    """Everything the evaluation needs: corners, rigs, true poses."""

    marking_corners: np.ndarray  # (n, 4, 2), map frame, z = 0
    cameras: dict
    poses: list  # true VehiclePoseRecord per frame

    @property
    def centers(self) -> np.ndarray:
        return self.marking_corners.mean(axis=1)


def _grid_positions(extent: float, spacing: float) -> np.ndarray:
    return np.arange(spacing / 2.0, extent - spacing / 2.0 + 1e-9, spacing)


def marking_grid(fspec: FieldSpec) -> np.ndarray:
    """Diamond corners on the field grid, counter-clockwise per marking."""
    a, b = fspec.half_diag_a, fspec.half_diag_b
    out = []
    for y in _grid_positions(fspec.extent_y, fspec.spacing):
        for x in _grid_positions(fspec.extent_x, fspec.spacing):
            out.append([[x + a, y], [x, y + b], [x - a, y], [x, y - b]])
    return np.array(out)


def _serpentine(rows, start, end, vertical=False):
    """Waypoints sweeping each value in `rows`, alternating direction."""
    pts = []
    for i, r in enumerate(rows):
        a, b = (start, end) if i % 2 == 0 else (end, start)
        if vertical:
            pts += [(r, a), (r, b)]
        else:
            pts += [(a, r), (b, r)]
    return pts


def trajectory_waypoints(spec: SceneSpec) -> np.ndarray:
    f, t = spec.field, spec.trajectory
    if t.pattern == "waypoints":
        return np.array(t.waypoints, dtype=float)
    lane = t.lane_spacing if t.lane_spacing is not None else f.spacing
    ys = _grid_positions(f.extent_y, lane)
    pts = _serpentine(ys, -t.margin, f.extent_x + t.margin)
    if t.pattern == "cross":
        xs = _grid_positions(f.extent_x, lane)
        pts += _serpentine(xs, -t.margin, f.extent_y + t.margin, vertical=True)
    return np.array(pts, dtype=float)


def sample_poses(waypoints: np.ndarray, speed: float, frame_rate: float):
    """Planar poses along the polyline at a fixed arc-length step.

    Yaw follows the direction of the segment each sample falls on.
    """
    deltas = np.diff(waypoints, axis=0)
    seg_len = np.linalg.norm(deltas, axis=1)
    keep = seg_len > 1e-12
    deltas, seg_len = deltas[keep], seg_len[keep]
    starts = waypoints[:-1][keep]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    step = speed / frame_rate
    n = int(math.floor(total / step + 1e-9)) + 1
    poses = []
    for k in range(n):
        s = min(k * step, total)
        i = int(np.searchsorted(cum[1:], s, side="right"))
        i = min(i, len(seg_len) - 1)
        frac = (s - cum[i]) / seg_len[i]
        p = starts[i] + frac * deltas[i]
        yaw = math.atan2(deltas[i][1], deltas[i][0])
        rot = axis_angle_to_matrix([0.0, 0.0, yaw])
        poses.append(
            VehiclePoseRecord(
                frame=k,
                timestamp=k / frame_rate,
                pose=RigidTransform(rot, np.array([p[0], p[1], 0.0])),
            )
        )
    return poses


def generate_scene(spec: SceneSpec):
    """Build ground truth and the emitted pose stream.

    Returns:
        (GroundTruth, poses): the poses carry the configured pose noise;
        GroundTruth keeps the exact ones.
    """
    validate_spec(spec)
    corners = marking_grid(spec.field)

    cameras = {}
    for i, cspec in enumerate(spec.cameras):
        model = make_camera_model(cspec)
        h = homography_from_camera(model)
        pairs = []
        for x, y in calibration_window(cspec):
            pix = project(MapPoint(x, y, 0.0), RigidTransform.identity(), model)
            w_px, h_px = model.image_size
            if not (0.0 <= pix.u < w_px and 0.0 <= pix.v < h_px):
                raise InvalidSpec(
                    f"cameras[{i}].window_near",
                    "calibration window projects outside the image; widen the "
                    "field of view or shrink the window",
                )
            pairs.append(PointPair(pix, GroundPoint(x, y)))
        roi = RegionOfInterest.from_points([p.pixel for p in pairs])
        cameras[cspec.camera_id] = TrueCamera(model, h, roi, pairs)

    true_poses = sample_poses(
        trajectory_waypoints(spec), spec.trajectory.speed, spec.trajectory.frame_rate
    )
    truth = GroundTruth(corners, cameras, true_poses)

    if spec.noise.pose_sigma_xy > 0 or spec.noise.pose_sigma_yaw > 0:
        emitted = []
        for rec in true_poses:
            rng = np.random.default_rng([spec.seed, 1, rec.frame])
            dx, dy = rng.normal(scale=spec.noise.pose_sigma_xy or 1e-300, size=2) if spec.noise.pose_sigma_xy > 0 else (0.0, 0.0)
            dyaw = rng.normal(scale=spec.noise.pose_sigma_yaw) if spec.noise.pose_sigma_yaw > 0 else 0.0
            rot = axis_angle_to_matrix([0.0, 0.0, dyaw]) @ rec.pose.rotation
            t = rec.pose.translation + np.array([dx, dy, 0.0])
            emitted.append(replace(rec, pose=RigidTransform(rot, t)))
    else:
        emitted = list(true_poses)
    return truth, emitted


def render_detections(truth: GroundTruth, poses, spec: SceneSpec):
    """Project all markings through the true rig and emit noisy detections.

    A marking is emitted for a frame/camera when all four noise-free corners
    land inside the image and the camera's ROI. Gaussian pixel noise is added
    afterwards, whole detections are dropped with the configured probability,
    and corner order is cyclically rotated at random.

    Projection always uses the true poses; the `poses` argument selects which
    frames are rendered (the emitted pose stream may carry noise).
    """
    corners = truth.marking_corners
    n = len(corners)
    flat = corners.reshape(-1, 2)
    flat3 = np.column_stack([flat, np.zeros(len(flat))])
    detections = []
    cam_items = list(truth.cameras.items())
    frames = {p.frame for p in poses}
    for rec in truth.poses:
        if rec.frame not in frames:
            continue
        for cam_idx, (cam_id, cam) in enumerate(cam_items):
            world_to_cam = cam.model.extrinsic.inverse().compose(rec.pose.inverse())
            p_c = flat3 @ world_to_cam.rotation.T + world_to_cam.translation
            depth = p_c[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                k = cam.model.intrinsics
                u = k.fx * p_c[:, 0] / depth + k.skew * p_c[:, 1] / depth + k.cx
                v = k.fy * p_c[:, 1] / depth + k.cy
            w, h = cam.model.image_size
            ok = (
                (depth > 1e-6)
                & (u >= 0.0)
                & (u < w)
                & (v >= 0.0)
                & (v < h)
            )
            pix = np.column_stack([u, v])
            ok &= roi_contains_array(cam.roi, np.nan_to_num(pix))
            visible = ok.reshape(n, 4).all(axis=1)
            for mid in np.flatnonzero(visible):
                rng = np.random.default_rng([spec.seed, 2, rec.frame, cam_idx, int(mid)])
                if spec.noise.dropout > 0 and rng.random() < spec.noise.dropout:
                    continue
                quad = pix.reshape(n, 4, 2)[mid].copy()
                if spec.noise.pixel_sigma > 0:
                    quad += rng.normal(scale=spec.noise.pixel_sigma, size=(4, 2))
                shift = int(rng.integers(4))
                quad = np.roll(quad, shift, axis=0)
                detections.append(DetectionRecord(rec.frame, cam_id, quad))
    return detections


def _build_section(cls, data, path):
    if not isinstance(data, dict):
        raise InvalidSpec(path, "expected an object")
    valid = {f.name for f in __import__("dataclasses").fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in valid:
            raise InvalidSpec(f"{path}.{key}", "unknown field")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise InvalidSpec(path, str(err)) from err


def scene_from_dict(data: dict) -> SceneSpec:
    """SceneSpec from a parsed JSON object; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise InvalidSpec("<root>", "scene config must be an object")
    known = {"field", "trajectory", "cameras", "noise", "seed"}
    for key in data:
        if key not in known:
            raise InvalidSpec(key, "unknown section")
    kwargs = {}
    if "field" in data:
        kwargs["field"] = _build_section(FieldSpec, data["field"], "field")
    if "trajectory" in data:
        traj = dict(data["trajectory"])
        if "waypoints" in traj and traj["waypoints"] is not None:
            try:
                traj["waypoints"] = tuple(
                    (float(p[0]), float(p[1])) for p in traj["waypoints"]
                )
            except (TypeError, ValueError, IndexError) as err:
                raise InvalidSpec("trajectory.waypoints", str(err)) from err
        kwargs["trajectory"] = _build_section(TrajectorySpec, traj, "trajectory")
    if "cameras" in data:
        if not isinstance(data["cameras"], list):
            raise InvalidSpec("cameras", "expected a list")
        kwargs["cameras"] = tuple(
            _build_section(CameraSpec, c, f"cameras[{i}]")
            for i, c in enumerate(data["cameras"])
        )
    if "noise" in data:
        kwargs["noise"] = _build_section(NoiseSpec, data["noise"], "noise")
    if "seed" in data:
        if not isinstance(data["seed"], int):
            raise InvalidSpec("seed", "seed must be an integer")
        kwargs["seed"] = data["seed"]
    spec = SceneSpec(**kwargs)
    validate_spec(spec)
    return spec


def scene_to_dict(spec: SceneSpec) -> dict:
    import dataclasses

    out = dataclasses.asdict(spec)
    # tuples serialize as lists in JSON; keep them plain
    return out


def reference_scene(pixel_sigma: float = 0.5, seed: int = 42) -> SceneSpec:
    """The 20 m x 20 m, 25-marking, two-camera scene used for acceptance.

    The cross trajectory observes every marking under two heading families,
    and the speed is set so the whole sweep takes exactly 600 frames.
    """
    base = SceneSpec(
        field=FieldSpec(extent_x=20.0, extent_y=20.0, spacing=4.0),
        trajectory=TrajectorySpec(pattern="cross", speed=1.0, frame_rate=10.0),
        noise=NoiseSpec(pixel_sigma=pixel_sigma),
        seed=seed,
    )
    wp = trajectory_waypoints(base)
    length = float(np.linalg.norm(np.diff(wp, axis=0), axis=1).sum())
    speed = length * base.trajectory.frame_rate / 599.0
    return replace(base, trajectory=replace(base.trajectory, speed=speed))


# share of the rig perturbation carried by the common body-attitude change
_BODY_ROTATION_SHARE = 0.9
_BODY_HEIGHT_SHARE = 0.6
_BODY_PITCH_PIVOT = np.array([0.0, 0.0, 0.5])  # roughly the axle line


def perturb_rig(models: dict, rotation_deg: float, translation_m: float, rng) -> dict:
    """Miscalibrate a camera rig the way a differently built vehicle would.

    Different vehicles differ mostly in body attitude and ride height, which
    move every camera coherently: the bulk of the rotation budget is a common
    body pitch (about the axle line) and the bulk of the translation budget a
    common height offset, with small independent per-camera mounting scatter
    on top. Returns a new camera_id -> CameraModel mapping.
    """
    sign_r, sign_t = rng.choice((-1.0, 1.0), size=2)
    body_pitch = sign_r * math.radians(rotation_deg) * _BODY_ROTATION_SHARE
    body_rot = axis_angle_to_matrix([0.0, body_pitch, 0.0])
    body_lift = np.array([0.0, 0.0, sign_t * translation_m * _BODY_HEIGHT_SHARE])
    out = {}
    for cid in sorted(models):
        model = models[cid]
        ext = model.extrinsic
        resid_rot = axis_angle_to_matrix(
            rng.normal(size=3) * math.radians(rotation_deg) * 0.1
        )
        resid_t = rng.normal(size=3) * translation_m * 0.1
        rotation = body_rot @ ext.rotation @ resid_rot
        translation = (
            body_rot @ (ext.translation - _BODY_PITCH_PIVOT)
            + _BODY_PITCH_PIVOT
            + body_lift
            + resid_t
        )
        out[cid] = model.with_extrinsic(RigidTransform(rotation, translation))
    return out


def perturb_extrinsic(
    model: CameraModel, rotation_deg: float, translation_m: float, rng
) -> CameraModel:
    """Single-camera convenience wrapper around `perturb_rig`."""
    return perturb_rig({model.camera_id: model}, rotation_deg, translation_m, rng)[
        model.camera_id
    ]
