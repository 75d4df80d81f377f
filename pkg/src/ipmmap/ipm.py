"""Inverse perspective mapping: the pixel-to-ground homography.

The homography maps image pixels onto the vehicle-frame ground plane. It can
be estimated from surveyed point pairs (pre-calibration) or composed from a
known camera model; the per-application homogeneous divisor is recomputed on
every call and never stored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AtInfinity,
    DegenerateCamera,
    DegenerateConfiguration,
    InsufficientPairs,
)
from .geometry import CameraModel, GroundPoint, PixelPoint

_S_EPSILON = 1e-9
_DET_EPSILON = 1e-12


@dataclass(frozen=True)
class Homography:
    """3x3 pixel-to-ground projective map, normalized so h[2][2] = 1."""

    h: np.ndarray

    def __post_init__(self):
        m = np.array(self.h, dtype=float).reshape(3, 3)
        if not np.isfinite(m).all():
            raise ValueError("non-finite homography")
        if m[2, 2] != 1.0:
            raise ValueError("homography not normalized (h[2][2] != 1)")
        if abs(np.linalg.det(m)) <= _DET_EPSILON:
            raise ValueError("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "h", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def from_matrix(cls, m) -> "Homography":
        """Normalize an arbitrary-scale 3x3 matrix so h[2][2] = 1."""
        m = np.array(m, dtype=float).reshape(3, 3)
        if abs(m[2, 2]) <= _DET_EPSILON:
            raise ValueError("cannot normalize: h[2][2] is zero")
        return cls(m / m[2, 2])

    def inverse(self) -> "Homography":
        return Homography.from_matrix(np.linalg.inv(self.h))


@dataclass(frozen=True)
class PointPair:
    """One surveyed correspondence between a pixel and a ground point."""

    pixel: PixelPoint
    ground: GroundPoint


@dataclass(frozen=True)
class RegionOfInterest:
    """Convex pixel polygon gating which detections are inverse projected."""

    polygon: tuple

    def __post_init__(self):
        pts = tuple(self.polygon)
        if len(pts) < 3:
            raise ValueError("ROI needs at least 3 vertices")
        arr = np.array([[p.u, p.v] for p in pts], dtype=float)
        area2 = _signed_area2(arr)
        if abs(area2) < 1e-12:
            raise ValueError("ROI polygon is degenerate")
        # store counter-clockwise in (u, v) coordinates
        if area2 < 0:
            pts = tuple(reversed(pts))
            arr = arr[::-1]
        n = len(arr)
        for i in range(n):
            a, b, c = arr[i], arr[(i + 1) % n], arr[(i + 2) % n]
            ab, bc = b - a, c - b
            if ab[0] * bc[1] - ab[1] * bc[0] < -1e-9:
                raise ValueError("ROI polygon is not convex")
        object.__setattr__(self, "polygon", pts)

    @classmethod
    def from_points(cls, pixels) -> "RegionOfInterest":
        """Convex hull of a pixel set (the outermost calibration points)."""
        pts = np.array([[p.u, p.v] for p in pixels], dtype=float)
        hull = _convex_hull(pts)
        return cls(tuple(PixelPoint(u, v) for u, v in hull))

    def as_array(self) -> np.ndarray:
        return np.array([[p.u, p.v] for p in self.polygon], dtype=float)


def _signed_area2(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices counter-clockwise."""
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    p = [tuple(q) for q in pts[order]]
    p = sorted(set(p))
    if len(p) < 3:
        raise ValueError("need at least 3 distinct points for a hull")

    def half(points):
        chain = []
        for q in points:
            while len(chain) >= 2:
                ax, ay = chain[-2]
                bx, by = chain[-1]
                if (bx - ax) * (q[1] - ay) - (by - ay) * (q[0] - ax) <= 0:
                    chain.pop()
                else:
                    break
            chain.append(q)
        return chain

    lower = half(p)
    upper = half(list(reversed(p)))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise ValueError("points are collinear")
    return np.array(hull, dtype=float)


def apply_ipm(h: Homography, p: PixelPoint) -> GroundPoint:
    """Inverse project one pixel onto the vehicle-frame ground plane.

    Raises:
        AtInfinity: if the homogeneous divisor is (numerically) zero, i.e.
            the pixel lies outside the usable ground region.
    """
    m = h.h
    s = m[2, 0] * p.u + m[2, 1] * p.v + 1.0
    if abs(s) <= _S_EPSILON:
        raise AtInfinity(f"pixel ({p.u:.1f}, {p.v:.1f}) maps to infinity")
    x = (m[0, 0] * p.u + m[0, 1] * p.v + m[0, 2]) / s
    y = (m[1, 0] * p.u + m[1, 1] * p.v + m[1, 2]) / s
    return GroundPoint(x, y)


def apply_ipm_array(h: Homography, pixels: np.ndarray) -> np.ndarray:
    """Vectorized `apply_ipm` over an (n, 2) pixel array."""
    pix = np.asarray(pixels, dtype=float).reshape(-1, 2)
    hom = np.column_stack([pix, np.ones(len(pix))]) @ h.h.T
    s = hom[:, 2]
    if np.any(np.abs(s) <= _S_EPSILON):
        raise AtInfinity("pixel maps to infinity")
    return hom[:, :2] / s[:, None]


def _normalization(points: np.ndarray) -> np.ndarray:
    """Hartley's isotropic normalization: centroid to origin, RMS-ish scale."""
    centroid = points.mean(axis=0)
    dist = np.linalg.norm(points - centroid, axis=1).mean()
    if dist < 1e-12:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / dist
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def estimate_homography_dlt(pairs) -> Homography:
    """Least-squares pixel-to-ground homography from surveyed point pairs.

    Solves the 2n x 9 homogeneous system by SVD after isotropically
    normalizing both point sets, then denormalizes and rescales so that
    h[2][2] = 1.

    Raises:
        InsufficientPairs: fewer than 4 pairs.
        DegenerateConfiguration: the design matrix has rank < 8 (collinear
            or duplicated points).
    """
    pairs = list(pairs)
    if len(pairs) < 4:
        raise InsufficientPairs(f"need >= 4 pairs, got {len(pairs)}")
    pix = np.array([[p.pixel.u, p.pixel.v] for p in pairs], dtype=float)
    gnd = np.array([[p.ground.x, p.ground.y] for p in pairs], dtype=float)

    t_pix = _normalization(pix)
    t_gnd = _normalization(gnd)
    pn = (np.column_stack([pix, np.ones(len(pix))]) @ t_pix.T)[:, :2]
    gn = (np.column_stack([gnd, np.ones(len(gnd))]) @ t_gnd.T)[:, :2]

    a = np.zeros((2 * len(pairs), 9))
    for i, ((u, v), (x, y)) in enumerate(zip(pn, gn)):
        a[2 * i] = [u, v, 1, 0, 0, 0, -x * u, -x * v, -x]
        a[2 * i + 1] = [0, 0, 0, u, v, 1, -y * u, -y * v, -y]

    _, sv, vt = np.linalg.svd(a)
    if sv[7] <= 1e-9 * sv[0]:
        raise DegenerateConfiguration(
            f"design matrix rank < 8 (singular values {sv[7]:.2e}/{sv[0]:.2e})"
        )
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_gnd) @ h_norm @ t_pix
    if abs(h[2, 2]) <= _DET_EPSILON:
        raise DegenerateConfiguration("estimated homography maps origin row to zero")
    return Homography.from_matrix(h)


def homography_from_camera(camera: CameraModel) -> Homography:
    """Compose the pixel-to-ground homography from intrinsics and extrinsic.

    With the vehicle->camera transform (R, t), ground points map to pixels
    through K [r1 r2 | t]; dropping the rotation's third column is exact for
    z = 0 points. The returned homography is the normalized inverse of that
    composition.

    Raises:
        DegenerateCamera: if the composition is singular (e.g. optical axis
            parallel to the ground with zero height).
    """
    vc = camera.extrinsic.inverse()  # vehicle -> camera
    m = np.column_stack([vc.rotation[:, 0], vc.rotation[:, 1], vc.translation])
    a = camera.intrinsics.matrix @ m
    det = np.linalg.det(a)
    if abs(det) <= _DET_EPSILON:
        raise DegenerateCamera(f"ground-to-pixel map is singular (det {det:.2e})")
    h = np.linalg.inv(a)
    if abs(h[2, 2]) <= _DET_EPSILON:
        raise DegenerateCamera("pixel-to-ground map cannot be normalized")
    return Homography.from_matrix(h)


def roi_contains(roi: RegionOfInterest, p: PixelPoint) -> bool:
    """True iff the pixel is inside or on the boundary of the convex ROI."""
    pts = roi.as_array()
    n = len(pts)
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        if (bx - ax) * (p.v - ay) - (by - ay) * (p.u - ax) < 0:
            return False
    return True


def roi_contains_array(roi: RegionOfInterest, pixels: np.ndarray) -> np.ndarray:
    """Vectorized `roi_contains` over an (n, 2) pixel array."""
    pix = np.asarray(pixels, dtype=float).reshape(-1, 2)
    pts = roi.as_array()
    edges = np.roll(pts, -1, axis=0) - pts
    rel_u = pix[:, None, 0] - pts[None, :, 0]
    rel_v = pix[:, None, 1] - pts[None, :, 1]
    cross = edges[None, :, 0] * rel_v - edges[None, :, 1] * rel_u
    return (cross >= 0).all(axis=1)
