"""Line-oriented text formats for every artifact the pipeline reads or writes.

All files are whitespace-separated with '#' comments. Formats (one record per
line unless noted):

* poses:       frame t x y z qw qx qy qz        (map-frame vehicle pose)
* detections:  frame camera_id u0 v0 u1 v1 u2 v2 u3 v3   (detector order)
* pairs:       u v x y                           (pixel vs vehicle-frame ground)
* cameras:     key-value blocks, one per camera; a block starts at its
               'camera_id' line. Keys: fx fy cx cy [skew] width height
               tx ty tz qw qx qy qz [roi u0 v0 u1 v1 ...]
* homography:  three rows of three numbers (row-major, pixel -> ground)
* map:         marking_id corner_idx x_w y_w observation_count
* groundtruth: marking_id corner_idx x_w y_w

Quaternions are unit camera-to-vehicle (or vehicle-to-map) rotations; on read
they are renormalized when off by up to 1e-3 and rejected beyond that.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import (
    CameraModel,
    GroundPoint,
    Intrinsics,
    PixelPoint,
    RigidTransform,
    matrix_to_quaternion,
    quaternion_to_matrix,
)
from .ipm import Homography, PointPair, RegionOfInterest
from .mapbuild import DetectionRecord, VehiclePoseRecord

FORMAT_VERSIONS = {
    "poses": 1,
    "detections": 1,
    "pairs": 1,
    "cameras": 1,
    "homography": 1,
    "map": 1,
    "groundtruth": 1,
}

_QUAT_SOFT_TOL = 1e-6
_QUAT_HARD_TOL = 1e-3


def _fmt(x) -> str:
    # repr round-trips float64 exactly, keeping read-write-read cycles lossless
    return repr(float(x))


def _data_lines(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise FormatError(path, 0, f"cannot read file: {err}") from err
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _floats(path, lineno, fields, expected):
    if len(fields) != expected:
        raise FormatError(path, lineno, f"expected {expected} fields, got {len(fields)}")
    try:
        return [float(f) for f in fields]
    except ValueError as err:
        raise FormatError(path, lineno, f"bad number: {err}") from err


def _read_quaternion(path, lineno, values):
    q = np.asarray(values, dtype=float)
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > _QUAT_HARD_TOL:
        raise FormatError(path, lineno, f"quaternion norm {norm:.6f} too far from 1")
    if abs(norm - 1.0) > _QUAT_SOFT_TOL:
        q = q / norm
    return quaternion_to_matrix(q)


# ---------------------------------------------------------------------------
# poses


def write_poses(path, poses) -> None:
    with open(path, "w") as fh:
        fh.write(f"# format: poses v{FORMAT_VERSIONS['poses']}\n")
        fh.write("# frame t x y z qw qx qy qz\n")
        for rec in poses:
            q = matrix_to_quaternion(rec.pose.rotation)
            t = rec.pose.translation
            fields = [rec.frame, _fmt(rec.timestamp)] + [_fmt(v) for v in t] + [
                _fmt(v) for v in q
            ]
            fh.write(" ".join(str(f) for f in fields) + "\n")


def read_poses(path):
    out = []
    seen = set()
    for lineno, line in _data_lines(path):
        fields = line.split()
        vals = _floats(path, lineno, fields, 9)
        frame = int(vals[0])
        if frame != vals[0]:
            raise FormatError(path, lineno, "frame index must be an integer")
        if frame in seen:
            raise FormatError(path, lineno, f"duplicate frame {frame}")
        seen.add(frame)
        rotation = _read_quaternion(path, lineno, vals[5:9])
        out.append(
            VehiclePoseRecord(
                frame,
                vals[1],
                RigidTransform(rotation, np.array(vals[2:5])),
            )
        )
    out.sort(key=lambda r: r.frame)
    return out


# ---------------------------------------------------------------------------
# detections


def write_detections(path, detections) -> None:
    with open(path, "w") as fh:
        fh.write(f"# format: detections v{FORMAT_VERSIONS['detections']}\n")
        fh.write("# frame camera_id u0 v0 u1 v1 u2 v2 u3 v3\n")
        for d in detections:
            pix = " ".join(_fmt(v) for v in np.asarray(d.pixels).ravel())
            fh.write(f"{d.frame} {d.camera_id} {pix}\n")


def read_detections(path):
    out = []
    for lineno, line in _data_lines(path):
        fields = line.split()
        if len(fields) != 10:
            raise FormatError(path, lineno, f"expected 10 fields, got {len(fields)}")
        try:
            frame = int(fields[0])
        except ValueError as err:
            raise FormatError(path, lineno, f"bad frame index: {err}") from err
        camera_id = fields[1]
        vals = _floats(path, lineno, fields[2:], 8)
        out.append(DetectionRecord(frame, camera_id, np.array(vals).reshape(4, 2)))
    return out


# ---------------------------------------------------------------------------
# calibration point pairs


def write_point_pairs(path, pairs) -> None:
    with open(path, "w") as fh:
        fh.write(f"# format: pairs v{FORMAT_VERSIONS['pairs']}\n")
        fh.write("# u v x y\n")
        for p in pairs:
            fh.write(
                f"{_fmt(p.pixel.u)} {_fmt(p.pixel.v)} "
                f"{_fmt(p.ground.x)} {_fmt(p.ground.y)}\n"
            )


def read_point_pairs(path):
    out = []
    for lineno, line in _data_lines(path):
        u, v, x, y = _floats(path, lineno, line.split(), 4)
        out.append(PointPair(PixelPoint(u, v), GroundPoint(x, y)))
    return out


# ---------------------------------------------------------------------------
# camera models


def write_camera_models(path, cameras, rois=None) -> None:
    """Write camera blocks; `rois` optionally maps camera_id -> ROI."""
    rois = rois or {}
    with open(path, "w") as fh:
        fh.write(f"# format: cameras v{FORMAT_VERSIONS['cameras']}\n")
        for cam in cameras:
            k = cam.intrinsics
            q = matrix_to_quaternion(cam.extrinsic.rotation)
            t = cam.extrinsic.translation
            fh.write(f"camera_id {cam.camera_id}\n")
            fh.write(f"fx {_fmt(k.fx)}\nfy {_fmt(k.fy)}\n")
            fh.write(f"cx {_fmt(k.cx)}\ncy {_fmt(k.cy)}\n")
            if k.skew != 0.0:
                fh.write(f"skew {_fmt(k.skew)}\n")
            fh.write(f"width {cam.image_size[0]}\nheight {cam.image_size[1]}\n")
            fh.write(f"tx {_fmt(t[0])}\nty {_fmt(t[1])}\ntz {_fmt(t[2])}\n")
            fh.write(
                f"qw {_fmt(q[0])}\nqx {_fmt(q[1])}\nqy {_fmt(q[2])}\nqz {_fmt(q[3])}\n"
            )
            roi = rois.get(cam.camera_id)
            if roi is not None:
                flat = " ".join(_fmt(v) for v in roi.as_array().ravel())
                fh.write(f"roi {flat}\n")
            fh.write("\n")


_REQUIRED_CAMERA_KEYS = (
    "fx",
    "fy",
    "cx",
    "cy",
    "width",
    "height",
    "tx",
    "ty",
    "tz",
    "qw",
    "qx",
    "qy",
    "qz",
)


def read_camera_models(path):
    """Returns (cameras, rois): camera_id -> CameraModel / RegionOfInterest."""
    blocks = []
    current = None
    for lineno, line in _data_lines(path):
        key, _, rest = line.partition(" ")
        rest = rest.strip()
        if key == "camera_id":
            if not rest:
                raise FormatError(path, lineno, "camera_id needs a value")
            current = {"camera_id": (lineno, rest)}
            blocks.append(current)
            continue
        if current is None:
            raise FormatError(path, lineno, f"'{key}' before any camera_id")
        if key in current:
            raise FormatError(path, lineno, f"duplicate key '{key}'")
        current[key] = (lineno, rest)

    cameras, rois = {}, {}
    for block in blocks:
        lineno, cid = block["camera_id"]
        for key in _REQUIRED_CAMERA_KEYS:
            if key not in block:
                raise FormatError(path, lineno, f"camera '{cid}' missing key '{key}'")

        def num(key):
            ln, raw = block[key]
            try:
                return float(raw)
            except ValueError as err:
                raise FormatError(path, ln, f"bad number for '{key}': {err}") from err

        skew = num("skew") if "skew" in block else 0.0
        rotation = _read_quaternion(
            path, block["qw"][0], [num("qw"), num("qx"), num("qy"), num("qz")]
        )
        try:
            intrinsics = Intrinsics(num("fx"), num("fy"), num("cx"), num("cy"), skew)
            model = CameraModel(
                intrinsics,
                RigidTransform(rotation, np.array([num("tx"), num("ty"), num("tz")])),
                image_size=(int(num("width")), int(num("height"))),
                camera_id=cid,
            )
        except ValueError as err:
            raise FormatError(path, lineno, str(err)) from err
        if cid in cameras:
            raise FormatError(path, lineno, f"duplicate camera '{cid}'")
        cameras[cid] = model
        if "roi" in block:
            ln, raw = block["roi"]
            vals = _floats(path, ln, raw.split(), len(raw.split()))
            if len(vals) < 6 or len(vals) % 2:
                raise FormatError(path, ln, "roi needs >= 3 u/v pairs")
            try:
                rois[cid] = RegionOfInterest(
                    tuple(
                        PixelPoint(vals[i], vals[i + 1])
                        for i in range(0, len(vals), 2)
                    )
                )
            except ValueError as err:
                raise FormatError(path, ln, f"bad roi: {err}") from err
    return cameras, rois


# ---------------------------------------------------------------------------
# homography


def write_homography(path, h: Homography) -> None:
    with open(path, "w") as fh:
        fh.write(f"# format: homography v{FORMAT_VERSIONS['homography']}\n")
        for row in h.h:
            fh.write(" ".join(_fmt(v) for v in row) + "\n")


def read_homography(path) -> Homography:
    rows = []
    last_line = 0
    for lineno, line in _data_lines(path):
        rows.append(_floats(path, lineno, line.split(), 3))
        last_line = lineno
    if len(rows) != 3:
        raise FormatError(path, last_line, f"expected 3 rows, got {len(rows)}")
    try:
        return Homography.from_matrix(np.array(rows))
    except ValueError as err:
        raise FormatError(path, last_line, str(err)) from err


# ---------------------------------------------------------------------------
# map and ground truth


def write_map(path, map_state) -> None:
    with open(path, "w") as fh:
        fh.write(f"# format: map v{FORMAT_VERSIONS['map']}\n")
        fh.write("# marking_id corner_idx x_w y_w observation_count\n")
        for mid in sorted(map_state.markings):
            m = map_state.markings[mid]
            for k in range(4):
                fh.write(
                    f"{mid} {k} {_fmt(m.corners[k, 0])} {_fmt(m.corners[k, 1])} "
                    f"{int(m.corner_counts[k])}\n"
                )


def write_ground_truth(path, truth_corners) -> None:
    corners = np.asarray(truth_corners, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"# format: groundtruth v{FORMAT_VERSIONS['groundtruth']}\n")
        fh.write("# marking_id corner_idx x_w y_w\n")
        for mid, quad in enumerate(corners):
            for k in range(4):
                fh.write(f"{mid} {k} {_fmt(quad[k, 0])} {_fmt(quad[k, 1])}\n")


def _read_corner_table(path, expected_fields):
    table = {}
    for lineno, line in _data_lines(path):
        vals = _floats(path, lineno, line.split(), expected_fields)
        mid, k = int(vals[0]), int(vals[1])
        if not (0 <= k < 4):
            raise FormatError(path, lineno, f"corner_idx {k} out of range")
        if (mid, k) in table:
            raise FormatError(path, lineno, f"duplicate corner {mid}/{k}")
        table[(mid, k)] = vals[2:]
    markings = {}
    for (mid, k), vals in table.items():
        markings.setdefault(mid, {})[k] = vals
    for mid, corners in markings.items():
        if len(corners) != 4:
            raise FormatError(path, 0, f"marking {mid} has {len(corners)} corners")
    return markings


def read_map(path):
    """Returns dict marking_id -> ((4, 2) corners, (4,) observation counts)."""
    markings = _read_corner_table(path, 5)
    out = {}
    for mid, corners in markings.items():
        quad = np.array([corners[k][:2] for k in range(4)])
        counts = np.array([int(corners[k][2]) for k in range(4)])
        out[mid] = (quad, counts)
    return out


def read_ground_truth(path) -> np.ndarray:
    """Returns (n, 4, 2) corner array ordered by marking id."""
    markings = _read_corner_table(path, 4)
    return np.array(
        [[markings[mid][k] for k in range(4)] for mid in sorted(markings)]
    )
