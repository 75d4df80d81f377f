"""Map accuracy evaluation: corner RMSE and rasterized IoU against truth.

Markings are paired by nearest center (greedy, bijective, gated); corner
correspondence reuses the association module's cyclic matcher. IoU rasterizes
both polygons onto a cell lattice anchored at the map origin and counts cells
whose center falls inside (or on the boundary of) each polygon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .association import match_corners
from .errors import ZeroArea

DEFAULT_CELL = 0.1
DEFAULT_EVAL_GATE = 2.0


@dataclass(frozen=True)
class MarkingEvaluation:
    estimated_id: int
    truth_index: int
    center_distance: float
    corner_errors: tuple  # 4 Euclidean distances, meters
    iou: float

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.corner_errors))


@dataclass
class EvaluationReport:
    matched: list = field(default_factory=list)  # MarkingEvaluation rows
    unmatched_truth: list = field(default_factory=list)
    unmatched_estimated: list = field(default_factory=list)
    rmse: float = float("nan")
    mean_iou: float = float("nan")
    # (marking_count, marking_mean_error, cumulative_mean_error) in creation order
    error_trace: list = field(default_factory=list)

    @property
    def corner_errors(self) -> np.ndarray:
        return np.array([e for row in self.matched for e in row.corner_errors])


def cell_occupancy(polygon, xs, ys) -> np.ndarray:
    """Boolean (len(xs), len(ys)) grid: which cell centers the polygon covers.

    A center on a polygon edge counts as covered. Uses a half-open ray
    crossing rule so verdicts are reproducible across implementations.
    """
    poly = np.asarray(polygon, dtype=float)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    px = gx.ravel()
    py = gy.ravel()
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        within = (
            (px >= min(x0, x1))
            & (px <= max(x0, x1))
            & (py >= min(y0, y1))
            & (py <= max(y0, y1))
        )
        on_edge |= (cross == 0.0) & within
        spans = (y0 <= py) != (y1 <= py)
        if y1 != y0:
            xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            inside ^= spans & (xint > px)
    return (inside | on_edge).reshape(len(xs), len(ys))


def _lattice(polys, cell):
    pts = np.vstack(polys)
    i0 = math.floor(pts[:, 0].min() / cell)
    i1 = math.ceil(pts[:, 0].max() / cell)
    j0 = math.floor(pts[:, 1].min() / cell)
    j1 = math.ceil(pts[:, 1].max() / cell)
    xs = (np.arange(i0, i1) + 0.5) * cell
    ys = (np.arange(j0, j1) + 0.5) * cell
    return xs, ys


def evaluate_iou(estimated_corners, truth_corners, cell: float = DEFAULT_CELL) -> float:
    """Rasterized IoU of two simple polygons.

    The joint bounding box is snapped outward to the cell lattice anchored at
    the map origin; a cell is occupied iff its center lies in the polygon.

    Raises:
        ZeroArea: neither polygon occupies any cell.
    """
    if cell <= 0:
        raise ValueError("cell size must be positive")
    a = np.asarray(estimated_corners, dtype=float)
    b = np.asarray(truth_corners, dtype=float)
    xs, ys = _lattice([a, b], cell)
    if len(xs) == 0 or len(ys) == 0:
        raise ZeroArea("degenerate joint bounding box")
    occ_a = cell_occupancy(a, xs, ys)
    occ_b = cell_occupancy(b, xs, ys)
    union = int(np.count_nonzero(occ_a | occ_b))
    if union == 0:
        raise ZeroArea("neither polygon occupies any cell")
    inter = int(np.count_nonzero(occ_a & occ_b))
    return inter / union


def _greedy_center_matching(est_centers, truth_centers, gate):
    pairs = []
    for i, (eid, c) in enumerate(est_centers):
        d = np.linalg.norm(truth_centers - c, axis=1)
        for j in np.flatnonzero(d <= gate):
            pairs.append((float(d[j]), i, int(j)))
    pairs.sort(key=lambda t: (t[0], t[1], t[2]))
    used_e, used_t, out = set(), set(), []
    for d, i, j in pairs:
        if i in used_e or j in used_t:
            continue
        used_e.add(i)
        used_t.add(j)
        out.append((i, j, d))
    return out


def evaluate_map(
    estimated,
    truth_corners,
    gate: float = DEFAULT_EVAL_GATE,
    cell: float = DEFAULT_CELL,
) -> EvaluationReport:
    """Full accuracy report for an estimated map against ground truth.

    Args:
        estimated: mapping marking_id -> (4, 2)-ish corner array (a MapState's
            markings work directly), or an iterable of (id, corners).
        truth_corners: (n, 4, 2) ground-truth corner array.
        gate: center-distance ceiling for pairing estimates with truth;
            wider than the association gate so gross errors stay visible.
        cell: IoU raster resolution.
    """
    if hasattr(estimated, "markings"):
        estimated = estimated.markings
    if isinstance(estimated, dict):
        items = sorted(estimated.items())
    else:
        items = sorted(estimated)
    est = []
    for mid, corners in items:
        c = np.asarray(getattr(corners, "corners", corners), dtype=float)
        est.append((mid, c[:, :2]))
    truth_corners = np.asarray(truth_corners, dtype=float)
    truth_centers = truth_corners.mean(axis=1)

    report = EvaluationReport()
    est_centers = [(mid, corners.mean(axis=0)) for mid, corners in est]
    matches = _greedy_center_matching(est_centers, truth_centers, gate)
    matched_e = {i for i, _, _ in matches}
    matched_t = {j for _, j, _ in matches}
    report.unmatched_estimated = [est[i][0] for i in range(len(est)) if i not in matched_e]
    report.unmatched_truth = [j for j in range(len(truth_corners)) if j not in matched_t]

    rows = []
    for i, j, d in matches:
        mid, corners = est[i]
        t = truth_corners[j]
        perm = match_corners(corners, t)
        errors = tuple(
            float(np.linalg.norm(corners[k] - t[perm[k]])) for k in range(4)
        )
        iou = evaluate_iou(corners, t, cell)
        rows.append(MarkingEvaluation(mid, j, d, errors, iou))
    rows.sort(key=lambda r: r.estimated_id)
    report.matched = rows

    if rows:
        errs = report.corner_errors
        report.rmse = float(np.sqrt(np.mean(errs**2)))
        report.mean_iou = float(np.mean([r.iou for r in rows]))
        running = []
        for k, row in enumerate(rows):
            running.append(row.mean_error)
            report.error_trace.append((k + 1, row.mean_error, float(np.mean(running))))
    return report
