"""Projective-geometry primitives: frames, rigid transforms, pinhole projection.

Coordinate conventions (used everywhere in this package, all matrices row-major):

* map frame: x/y span the ground plane, z points up; marking corners live at
  z_w = 0.
* vehicle frame: x forward, y left, z up; the vehicle pose ``T_wb`` maps
  vehicle coordinates into the map frame.
* camera frame: x right, y down, z forward along the optical axis; the camera
  extrinsic ``T_cb`` maps camera coordinates into the vehicle frame, so its
  translation is the camera's mounting position on the vehicle.
* pixels: u right, v down, origin at the top-left corner.

Images are assumed pre-rectified; no lens distortion model is applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera

# Points closer to the camera plane than this are treated as observation
# errors, never clamped.
DEPTH_EPSILON = 1e-6

_ORTHONORMALITY_TOL = 1e-9


@dataclass(frozen=True)
class PixelPoint:
    """Image-plane point in pixels."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError(f"non-finite pixel ({self.u}, {self.v})")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=float)


@dataclass(frozen=True)
class GroundPoint:
    """Vehicle-frame ground-plane point in meters (z implicitly 0)."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite ground point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class MapPoint:
    """Map-frame point in meters."""

    x_w: float
    y_w: float
    z_w: float = 0.0

    def __post_init__(self):
        if not (
            math.isfinite(self.x_w)
            and math.isfinite(self.y_w)
            and math.isfinite(self.z_w)
        ):
            raise ValueError(
                f"non-finite map point ({self.x_w}, {self.y_w}, {self.z_w})"
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.x_w, self.y_w, self.z_w], dtype=float)


def _frozen_array(a, shape) -> np.ndarray:
    out = np.array(a, dtype=float).reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid transform: p_out = rotation @ p_in + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen_array(self.rotation, (3, 3)))
        object.__setattr__(
            self, "translation", _frozen_array(self.translation, (3,))
        )
        r = self.rotation
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > _ORTHONORMALITY_TOL or not np.isfinite(r).all():
            raise ValueError(f"rotation not orthonormal (deviation {err:.2e})")
        if np.linalg.det(r) < 0.0:
            raise ValueError("rotation has determinant -1 (reflection)")
        if not np.isfinite(self.translation).all():
            raise ValueError("non-finite translation")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self applied after other: (self @ other)(p) = self(other(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, p: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(p, dtype=float) + self.translation

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive ({self.fx}, {self.fy})")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.fx, self.skew, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics plus camera-to-vehicle extrinsic and image bounds."""

    intrinsics: Intrinsics
    extrinsic: RigidTransform
    image_size: tuple = (0, 0)
    camera_id: str = "cam0"

    def __post_init__(self):
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValueError(f"image size must be positive, got {self.image_size}")

    def with_extrinsic(self, extrinsic: RigidTransform) -> "CameraModel":
        return CameraModel(self.intrinsics, extrinsic, self.image_size, self.camera_id)


def axis_angle_to_matrix(w) -> np.ndarray:
    """Rodrigues map from an axis-angle vector to a rotation matrix."""
    w = np.asarray(w, dtype=float).reshape(3)
    theta = np.linalg.norm(w)
    k = skew_matrix(w)
    if theta < 1e-12:
        # second-order series keeps orthonormality to machine precision here
        return np.eye(3) + k + 0.5 * (k @ k)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def matrix_to_axis_angle(r: np.ndarray) -> np.ndarray:
    """Inverse Rodrigues map; returns the rotation vector with angle in [0, pi]."""
    r = np.asarray(r, dtype=float)
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = math.acos(cos_theta)
    if theta < 1e-12:
        return np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    if theta > math.pi - 1e-6:
        # near pi the off-diagonal form degenerates; recover axis from R + I
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diagonal(m), 0.0))
        axis[1] = math.copysign(axis[1], m[0, 1])
        axis[2] = math.copysign(axis[2], m[0, 2])
        n = np.linalg.norm(axis)
        if n < 1e-12:
            return np.array([theta, 0.0, 0.0])
        return theta * axis / n
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return theta * axis / (2.0 * math.sin(theta))


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    cos_theta = np.clip((np.trace(np.asarray(r, dtype=float)) - 1.0) / 2.0, -1.0, 1.0)
    return math.acos(cos_theta)


def skew_matrix(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quaternion_to_matrix(q) -> np.ndarray:
    """Unit quaternion (qw, qx, qy, qz) to rotation matrix."""
    qw, qx, qy, qz = np.asarray(q, dtype=float).reshape(4)
    n = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    if n < 1e-12:
        raise ValueError("zero quaternion")
    qw, qx, qy, qz = qw / n, qx / n, qy / n, qz / n
    return np.array(
        [
            [
                1 - 2 * (qy * qy + qz * qz),
                2 * (qx * qy - qz * qw),
                2 * (qx * qz + qy * qw),
            ],
            [
                2 * (qx * qy + qz * qw),
                1 - 2 * (qx * qx + qz * qz),
                2 * (qy * qz - qx * qw),
            ],
            [
                2 * (qx * qz - qy * qw),
                2 * (qy * qz + qx * qw),
                1 - 2 * (qx * qx + qy * qy),
            ],
        ]
    )


def matrix_to_quaternion(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (qw, qx, qy, qz), qw >= 0."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [
                0.25 * s,
                (r[2, 1] - r[1, 2]) / s,
                (r[0, 2] - r[2, 0]) / s,
                (r[1, 0] - r[0, 1]) / s,
            ]
        )
    else:
        i = int(np.argmax(np.diagonal(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def _camera_point(corner, pose: RigidTransform, camera: CameraModel) -> np.ndarray:
    p_w = corner.as_array() if isinstance(corner, MapPoint) else np.asarray(corner, float)
    p_b = pose.inverse().apply(p_w)
    return camera.extrinsic.inverse().apply(p_b)


def project(corner, pose: RigidTransform, camera: CameraModel) -> PixelPoint:
    """Project a map-frame point into the image.

    Applies the chain K . [vehicle->camera] . [map->vehicle] to the
    homogeneous point and divides by the resulting depth.

    Raises:
        BehindCamera: if the camera-frame depth is <= DEPTH_EPSILON.
    """
    p_c = _camera_point(corner, pose, camera)
    depth = p_c[2]
    if depth <= DEPTH_EPSILON:
        raise BehindCamera(depth)
    k = camera.intrinsics
    u = (k.fx * p_c[0] + k.skew * p_c[1]) / depth + k.cx
    v = k.fy * p_c[1] / depth + k.cy
    return PixelPoint(u, v)


def project_jacobian(corner, pose: RigidTransform, camera: CameraModel):
    """Analytic Jacobians of `project`.

    Returns:
        (d_pixel_d_corner, d_pixel_d_extrinsic): a 2x3 matrix of derivatives
        w.r.t. the map-frame point, and a 2x6 matrix w.r.t. the extrinsic's
        local parameterization (axis-angle increment composed on the left of
        the rotation, then translation).

    Raises:
        BehindCamera: same precondition as `project`.
    """
    p_w = corner.as_array() if isinstance(corner, MapPoint) else np.asarray(corner, float)
    p_b = pose.inverse().apply(p_w)
    r_cb = camera.extrinsic.rotation
    t_cb = camera.extrinsic.translation
    a = p_b - t_cb
    p_c = r_cb.T @ a
    depth = p_c[2]
    if depth <= DEPTH_EPSILON:
        raise BehindCamera(depth)

    k = camera.intrinsics
    x, y = p_c[0], p_c[1]
    inv_z = 1.0 / depth
    # d(u,v)/d(camera-frame point)
    j_pix = np.array(
        [
            [k.fx * inv_z, k.skew * inv_z, -(k.fx * x + k.skew * y) * inv_z * inv_z],
            [0.0, k.fy * inv_z, -k.fy * y * inv_z * inv_z],
        ]
    )

    d_corner = j_pix @ (r_cb.T @ pose.rotation.T)

    # extrinsic perturbation: R <- exp(w^) R, t <- t + dt
    d_ext = np.empty((2, 6))
    d_ext[:, :3] = j_pix @ (r_cb.T @ skew_matrix(a))
    d_ext[:, 3:] = j_pix @ (-r_cb.T)
    return d_corner, d_ext
