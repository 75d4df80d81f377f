"""Frame-to-map data association.

A quad-tree over marking centers answers gated radius queries; an incoming
detection is linked to the nearest existing marking inside the gate, and the
corner correspondence is the cyclic shift minimizing total corner distance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AmbiguousAssociation

logger = logging.getLogger(__name__)

DEFAULT_GATE = 1.0
TIE_EPSILON = 0.05
NODE_CAPACITY = 8
MAX_DEPTH = 16


class _Node:
    __slots__ = ("cx", "cy", "half", "depth", "items", "children")

    def __init__(self, cx, cy, half, depth):
        self.cx = cx
        self.cy = cy
        self.half = half
        self.depth = depth
        self.items = []  # (x, y, marking_id)
        self.children = None

    def contains(self, x, y):
        return (
            self.cx - self.half <= x <= self.cx + self.half
            and self.cy - self.half <= y <= self.cy + self.half
        )

    def intersects_circle(self, x, y, r):
        dx = max(abs(x - self.cx) - self.half, 0.0)
        dy = max(abs(y - self.cy) - self.half, 0.0)
        return dx * dx + dy * dy <= r * r

    def child_index(self, x, y):
        return (1 if x > self.cx else 0) | (2 if y > self.cy else 0)

    def subdivide(self):
        h = self.half / 2.0
        self.children = [
            _Node(self.cx - h, self.cy - h, h, self.depth + 1),
            _Node(self.cx + h, self.cy - h, h, self.depth + 1),
            _Node(self.cx - h, self.cy + h, h, self.depth + 1),
            _Node(self.cx + h, self.cy + h, h, self.depth + 1),
        ]
        for x, y, mid in self.items:
            c = self.children[self.child_index(x, y)]
            c.items.append((x, y, mid))
        self.items = []

    def insert(self, x, y, mid):
        if self.children is None:
            if len(self.items) < NODE_CAPACITY or self.depth >= MAX_DEPTH:
                self.items.append((x, y, mid))
                return
            self.subdivide()
        self.children[self.child_index(x, y)].insert(x, y, mid)

    def remove(self, x, y, mid):
        if self.children is None:
            for i, (px, py, pid) in enumerate(self.items):
                if pid == mid and px == x and py == y:
                    del self.items[i]
                    return True
            return False
        return self.children[self.child_index(x, y)].remove(x, y, mid)

    def collect(self, out):
        out.extend(self.items)
        if self.children is not None:
            for c in self.children:
                c.collect(out)

    def query(self, x, y, r, out):
        if not self.intersects_circle(x, y, r):
            return
        for px, py, pid in self.items:
            d = math.hypot(px - x, py - y)
            if d <= r:
                out.append((d, px, py, pid))
        if self.children is not None:
            for c in self.children:
                c.query(x, y, r, out)


class QuadTree:
    """Point index over marking centers with exact radius queries.

    Single-writer: inserts/removes must not run concurrently with queries.
    The root rectangle doubles (about its center) whenever an insert falls
    outside it.
    """

    def __init__(self, center=(0.0, 0.0), half_extent=32.0):
        if half_extent <= 0:
            raise ValueError("half_extent must be positive")
        self._root = _Node(float(center[0]), float(center[1]), float(half_extent), 0)
        self._count = 0

    def __len__(self):
        return self._count

    def insert(self, center, marking_id) -> None:
        x, y = float(center[0]), float(center[1])
        while not self._root.contains(x, y):
            self._grow()
        self._root.insert(x, y, marking_id)
        self._count += 1

    def remove(self, center, marking_id) -> None:
        """Remove one item previously inserted at exactly this center."""
        x, y = float(center[0]), float(center[1])
        if not self._root.contains(x, y) or not self._root.remove(x, y, marking_id):
            raise KeyError(f"marking {marking_id} not stored at ({x}, {y})")
        self._count -= 1

    def query_radius(self, center, radius):
        """All items within `radius` of `center`, sorted by ascending distance.

        Returns a list of ((x, y), marking_id) tuples; ties broken by id.
        """
        if radius <= 0:
            raise ValueError("radius must be positive")
        hits = []
        self._root.query(float(center[0]), float(center[1]), float(radius), hits)
        hits.sort(key=lambda t: (t[0], t[3]))
        return [((x, y), mid) for _, x, y, mid in hits]

    def items(self):
        out = []
        self._root.collect(out)
        return [((x, y), mid) for x, y, mid in out]

    def _grow(self):
        old = self._root
        items = []
        old.collect(items)
        self._root = _Node(old.cx, old.cy, old.half * 2.0, 0)
        for x, y, mid in items:
            self._root.insert(x, y, mid)


@dataclass(frozen=True)
class DetectedMarking:
    """One detected diamond, already lifted into the map frame.

    `corners` are map-frame corner coordinates in counter-clockwise order;
    `pixel_corners` are the raw pixel observations in the same order.
    """

    corners: np.ndarray  # (4, 2)
    pixel_corners: np.ndarray  # (4, 2)
    source_frame: int
    camera_id: str

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=float).reshape(4, 2)
        p = np.asarray(self.pixel_corners, dtype=float).reshape(4, 2)
        if not (np.isfinite(c).all() and np.isfinite(p).all()):
            raise ValueError("non-finite detection")
        if not polygon_is_simple(c):
            raise ValueError("detection polygon is self-intersecting")
        if signed_area(c) <= 0:
            raise ValueError("detection corners must wind counter-clockwise")
        object.__setattr__(self, "corners", c)
        object.__setattr__(self, "pixel_corners", p)

    @property
    def center(self) -> np.ndarray:
        return self.corners.mean(axis=0)


@dataclass(frozen=True)
class AssociationResult:
    matched: Optional[int]
    corner_permutation: tuple
    center_distance: float = float("nan")

    def __post_init__(self):
        if sorted(self.corner_permutation) != [0, 1, 2, 3]:
            raise ValueError("corner_permutation must be a bijection on 0..3")


def signed_area(points: np.ndarray) -> float:
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_is_simple(quad: np.ndarray) -> bool:
    """True iff the 4-gon has no crossing between its two opposite-edge pairs."""

    def segments_cross(a, b, c, d):
        def orient(p, q, r):
            v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
            return 0 if abs(v) < 1e-15 else (1 if v > 0 else -1)

        o1, o2 = orient(a, b, c), orient(a, b, d)
        o3, o4 = orient(c, d, a), orient(c, d, b)
        return o1 != o2 and o3 != o4

    q = np.asarray(quad, dtype=float)
    return not (
        segments_cross(q[0], q[1], q[2], q[3])
        or segments_cross(q[1], q[2], q[3], q[0])
    )


def normalize_winding(points: np.ndarray) -> list:
    """Index order putting a quad counter-clockwise, starting at min (y, x).

    Returns indices `order` such that points[order] is the canonical cyclic
    representative; apply the same order to any parallel per-corner data.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(p)
    order = list(range(n))
    if signed_area(p) < 0:
        order = order[::-1]
    ordered = p[order]
    start = min(range(n), key=lambda i: (ordered[i][1], ordered[i][0]))
    return order[start:] + order[:start]


def match_corners(detection_corners, map_corners) -> tuple:
    """Cyclic-shift corner correspondence minimizing total corner distance.

    Both inputs must be length-4 with consistent (counter-clockwise) winding.
    Returns `perm` with perm[i] = map-corner index observed by detection
    corner i.
    """
    det = np.asarray(detection_corners, dtype=float).reshape(4, 2)
    ref = np.asarray(map_corners, dtype=float).reshape(4, 2)
    best_perm, best_total = None, math.inf
    for shift in range(4):
        perm = tuple((i + shift) % 4 for i in range(4))
        total = float(np.linalg.norm(det - ref[list(perm)], axis=1).sum())
        if total < best_total:
            best_total, best_perm = total, perm
    return best_perm


def associate_marking(map_state, detection: DetectedMarking, gate: float = DEFAULT_GATE,
                      tie_epsilon: float = TIE_EPSILON) -> AssociationResult:
    """Gate the detection against the map's quad-tree of marking centers.

    Raises:
        AmbiguousAssociation: when the two nearest candidates are within
            `tie_epsilon` of each other.
    """
    center = detection.center
    candidates = map_state.index.query_radius(center, gate)
    if not candidates:
        return AssociationResult(None, (0, 1, 2, 3))
    (best_pt, best_id) = candidates[0]
    best_d = math.hypot(best_pt[0] - center[0], best_pt[1] - center[1])
    if len(candidates) > 1:
        (second_pt, second_id) = candidates[1]
        second_d = math.hypot(second_pt[0] - center[0], second_pt[1] - center[1])
        if second_d - best_d < tie_epsilon:
            raise AmbiguousAssociation(best_id, second_id, second_d - best_d)
    marking = map_state.markings[best_id]
    perm = match_corners(detection.corners, marking.corners[:, :2])
    return AssociationResult(best_id, perm, best_d)
