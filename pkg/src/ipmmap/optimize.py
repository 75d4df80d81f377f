"""Joint refinement of camera extrinsics and marking corners.

Damped nonlinear least squares over all recorded pixel observations: one
2-vector reprojection residual per observed corner per frame, plus one
translation-prior residual per camera (the camera's installation position
constrains the otherwise weakly observed extrinsic translation). Corners are
parameterized as (x_w, y_w) so the ground-plane constraint holds by
construction; extrinsic rotations take axis-angle increments composed on the
left. The normal equations are solved by eliminating the 2x2 corner blocks
first (Schur complement onto the per-camera 6-dof blocks).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyProblem, MissingPrior, NoProgress, NumericalFailure
from .geometry import (
    CameraModel,
    RigidTransform,
    axis_angle_to_matrix,
    matrix_to_axis_angle,
)
from .ipm import Homography, homography_from_camera

logger = logging.getLogger(__name__)

_DEPTH_EPSILON = 1e-6


@dataclass(frozen=True)
class PriorConfig:
    """Per-camera prior: mounting translation and the initial rotation guess."""

    t0: np.ndarray
    sigma_prior: float
    initial_rotation: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "t0", np.asarray(self.t0, dtype=float).reshape(3))
        if self.sigma_prior <= 0:
            raise ValueError("sigma_prior must be positive")


@dataclass
class SolverOptions:
    max_iterations: int = 100
    cost_tolerance: float = 1e-10
    gradient_tolerance: float = 1e-10
    initial_damping: float = 1e-4
    damping_increase: float = 10.0
    damping_decrease: float = 0.5
    min_damping: float = 1e-12
    max_damping: float = 1e12
    huber_delta: Optional[float] = None  # pixels; None = plain squared loss
    sigma_rotation_prior: Optional[float] = None  # radians; None = off


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    termination: str
    cost_trace: list
    final_damping: float
    num_reprojection_residuals: int = 0
    num_prior_residuals: int = 0

    def summary_line(self) -> str:
        return (
            f"solve residuals={self.num_reprojection_residuals}"
            f"+{self.num_prior_residuals} iters={self.iterations} "
            f"cost0={self.initial_cost:.6e} cost1={self.final_cost:.6e} "
            f"reason={self.termination} lambda={self.final_damping:.3e}"
        )


@dataclass
class OptimizationProblem:
    """Flattened residual system over camera and corner parameter blocks."""

    camera_ids: list
    intrinsics: np.ndarray  # (C, 3, 3)
    rotations: np.ndarray  # (C, 3, 3) current extrinsic rotations
    translations: np.ndarray  # (C, 3)
    prior_t0: np.ndarray  # (C, 3)
    sigma_prior: np.ndarray  # (C,)
    corner_keys: list  # [(marking_id, corner_idx)]
    corners: np.ndarray  # (L, 2)
    obs_camera: np.ndarray  # (M,) index into camera blocks
    obs_corner: np.ndarray  # (M,) index into corner blocks
    obs_pose_r: np.ndarray  # (M, 3, 3) vehicle pose rotations
    obs_pose_t: np.ndarray  # (M, 3)
    obs_pixel: np.ndarray  # (M, 2) measured pixels
    sigma_pixel: float = 1.0
    initial_rotations: Optional[np.ndarray] = None  # (C, 3, 3) for rotation prior

    @property
    def num_cameras(self) -> int:
        return len(self.camera_ids)

    @property
    def num_corners(self) -> int:
        return len(self.corner_keys)

    @property
    def num_reprojection_residuals(self) -> int:
        return len(self.obs_camera)

    @property
    def num_prior_residuals(self) -> int:
        return self.num_cameras


def build_problem(map_state, priors: dict, sigma_pixel: float = 1.0) -> OptimizationProblem:
    """Assemble the residual system from the map's observation log.

    Every camera that appears in an observation must have an entry in
    `priors` and a full camera model in the map's camera setups.

    Raises:
        EmptyProblem: no marking carries any observation.
        MissingPrior: a camera with observations lacks a prior.
    """
    corner_keys = []
    corner_rows = {}
    corners = []
    cam_rows = {}
    camera_ids = []

    obs_camera, obs_corner, obs_pose_r, obs_pose_t, obs_pixel = [], [], [], [], []
    for mid in sorted(map_state.markings):
        marking = map_state.markings[mid]
        if not marking.observations:
            continue
        for k in range(4):
            corner_rows[(mid, k)] = len(corner_keys)
            corner_keys.append((mid, k))
            corners.append(marking.corners[k, :2])
        for obs in marking.observations:
            cid = obs.camera_id
            if cid not in cam_rows:
                if cid not in priors:
                    raise MissingPrior(cid)
                cam_rows[cid] = len(camera_ids)
                camera_ids.append(cid)
            pose = map_state.poses[obs.frame].pose
            for i in range(4):
                obs_camera.append(cam_rows[cid])
                obs_corner.append(corner_rows[(mid, obs.corner_permutation[i])])
                obs_pose_r.append(pose.rotation)
                obs_pose_t.append(pose.translation)
                obs_pixel.append(obs.pixels[i])

    if not obs_camera:
        raise EmptyProblem("map has no observations to optimize")

    intrinsics = np.stack(
        [map_state.cameras[cid].model.intrinsics.matrix for cid in camera_ids]
    )
    rotations = np.stack(
        [map_state.cameras[cid].model.extrinsic.rotation for cid in camera_ids]
    )
    translations = np.stack(
        [map_state.cameras[cid].model.extrinsic.translation for cid in camera_ids]
    )
    prior_t0 = np.stack([priors[cid].t0 for cid in camera_ids])
    sigma_prior = np.array([priors[cid].sigma_prior for cid in camera_ids])
    initial_rotations = np.stack(
        [
            priors[cid].initial_rotation
            if priors[cid].initial_rotation is not None
            else map_state.cameras[cid].model.extrinsic.rotation
            for cid in camera_ids
        ]
    )
    return OptimizationProblem(
        camera_ids=camera_ids,
        intrinsics=intrinsics,
        rotations=rotations,
        translations=translations,
        prior_t0=prior_t0,
        sigma_prior=sigma_prior,
        corner_keys=corner_keys,
        corners=np.array(corners, dtype=float),
        obs_camera=np.array(obs_camera, dtype=int),
        obs_corner=np.array(obs_corner, dtype=int),
        obs_pose_r=np.array(obs_pose_r, dtype=float),
        obs_pose_t=np.array(obs_pose_t, dtype=float),
        obs_pixel=np.array(obs_pixel, dtype=float),
        sigma_pixel=float(sigma_pixel),
        initial_rotations=initial_rotations,
    )


class _Evaluator:
    """Vectorized residual/Jacobian evaluation for one problem."""

    def __init__(self, problem: OptimizationProblem, opts: SolverOptions):
        self.p = problem
        self.opts = opts

    def camera_points(self, rotations, translations, corners):
        p = self.p
        l3 = np.column_stack(
            [corners[p.obs_corner], np.zeros(len(p.obs_corner))]
        )
        # vehicle frame: R_wb^T (l - t_wb)
        diff = l3 - p.obs_pose_t
        p_b = np.einsum("mji,mj->mi", p.obs_pose_r, diff)
        # camera frame: R_cb^T (p_b - t_cb)
        r_cb = rotations[p.obs_camera]
        a = p_b - translations[p.obs_camera]
        p_c = np.einsum("mji,mj->mi", r_cb, a)
        return p_c, a, r_cb

    def reprojection_residuals(self, rotations, translations, corners):
        """Returns (residuals (M, 2), p_c, a, r_cb) or None if infeasible."""
        p = self.p
        p_c, a, r_cb = self.camera_points(rotations, translations, corners)
        depth = p_c[:, 2]
        if np.any(depth <= _DEPTH_EPSILON):
            return None
        k = p.intrinsics[p.obs_camera]
        u = (k[:, 0, 0] * p_c[:, 0] + k[:, 0, 1] * p_c[:, 1]) / depth + k[:, 0, 2]
        v = k[:, 1, 1] * p_c[:, 1] / depth + k[:, 1, 2]
        res = (np.column_stack([u, v]) - p.obs_pixel) / p.sigma_pixel
        return res, p_c, a, r_cb

    def robust_weights(self, res):
        """IRLS weights for the optional Huber loss (in pixel units)."""
        delta = self.opts.huber_delta
        if delta is None:
            return None
        norms = np.linalg.norm(res, axis=1) * self.p.sigma_pixel
        w = np.ones(len(res))
        mask = norms > delta
        w[mask] = delta / norms[mask]
        return np.sqrt(w)

    def prior_residuals(self, rotations, translations):
        p = self.p
        out = [(translations - p.prior_t0) / p.sigma_prior[:, None]]
        if self.opts.sigma_rotation_prior is not None:
            rows = []
            for c in range(p.num_cameras):
                w = matrix_to_axis_angle(rotations[c] @ p.initial_rotations[c].T)
                rows.append(w / self.opts.sigma_rotation_prior)
            out.append(np.array(rows))
        return out

    def cost(self, rotations, translations, corners):
        evald = self.reprojection_residuals(rotations, translations, corners)
        if evald is None:
            return None
        res = evald[0]
        sw = self.robust_weights(res)
        if sw is not None:
            res = res * sw[:, None]
        total = float(np.sum(res * res))
        for block in self.prior_residuals(rotations, translations):
            total += float(np.sum(block * block))
        return 0.5 * total

    def jacobian_blocks(self, rotations, translations, corners):
        """Per-observation Jacobians (M,2,6) wrt camera and (M,2,2) wrt corner."""
        p = self.p
        evald = self.reprojection_residuals(rotations, translations, corners)
        if evald is None:
            return None
        res, p_c, a, r_cb = evald
        k = p.intrinsics[p.obs_camera]
        inv_z = 1.0 / p_c[:, 2]
        fx, sk, fy = k[:, 0, 0], k[:, 0, 1], k[:, 1, 1]
        j_pix = np.zeros((len(res), 2, 3))
        j_pix[:, 0, 0] = fx * inv_z
        j_pix[:, 0, 1] = sk * inv_z
        j_pix[:, 0, 2] = -(fx * p_c[:, 0] + sk * p_c[:, 1]) * inv_z * inv_z
        j_pix[:, 1, 1] = fy * inv_z
        j_pix[:, 1, 2] = -fy * p_c[:, 1] * inv_z * inv_z
        j_pix /= p.sigma_pixel

        # d p_c / d corner(x_w, y_w): R_cb^T R_wb^T, first two columns
        m = np.einsum("mki,mjk->mij", r_cb, p.obs_pose_r)
        j_corner = np.einsum("mab,mbc->mac", j_pix, m[:, :, :2])

        # d p_c / d extrinsic: rotation part R_cb^T [a]x, translation -R_cb^T
        ax = np.zeros((len(res), 3, 3))
        ax[:, 0, 1] = -a[:, 2]
        ax[:, 0, 2] = a[:, 1]
        ax[:, 1, 0] = a[:, 2]
        ax[:, 1, 2] = -a[:, 0]
        ax[:, 2, 0] = -a[:, 1]
        ax[:, 2, 1] = a[:, 0]
        rot_part = np.einsum("mji,mjk->mik", r_cb, ax)
        j_cam = np.empty((len(res), 2, 6))
        j_cam[:, :, :3] = np.einsum("mab,mbc->mac", j_pix, rot_part)
        j_cam[:, :, 3:] = np.einsum("mab,mbc->mac", j_pix, -np.transpose(r_cb, (0, 2, 1)))

        sw = self.robust_weights(res)
        if sw is not None:
            res = res * sw[:, None]
            j_cam = j_cam * sw[:, None, None]
            j_corner = j_corner * sw[:, None, None]
        return res, j_cam, j_corner


def solve(problem: OptimizationProblem, opts: Optional[SolverOptions] = None):
    """Levenberg-Marquardt with corner-block Schur elimination.

    Returns:
        (extrinsics, corners, report): camera_id -> RigidTransform,
        (marking_id, corner_idx) -> (x_w, y_w), and the SolveReport.

    Raises:
        NumericalFailure: non-finite cost or Jacobian at an accepted state.
        NoProgress: damping exceeded its ceiling without an acceptable step.
    """
    opts = opts or SolverOptions()
    ev = _Evaluator(problem, opts)
    c_count = problem.num_cameras
    l_count = problem.num_corners

    rotations = problem.rotations.copy()
    translations = problem.translations.copy()
    corners = problem.corners.copy()

    cost = ev.cost(rotations, translations, corners)
    if cost is None or not np.isfinite(cost):
        bad = _first_bad_residual(ev, rotations, translations, corners)
        raise NumericalFailure(
            f"non-finite cost at initial state (residual {bad})", bad
        )
    initial_cost = cost
    trace = [cost]
    damping = opts.initial_damping
    iterations = 0
    termination = "max_iterations"

    while iterations < opts.max_iterations:
        iterations += 1
        blocks = ev.jacobian_blocks(rotations, translations, corners)
        if blocks is None:
            raise NumericalFailure("state became infeasible after acceptance")
        res, j_cam, j_corner = blocks
        if not (
            np.isfinite(res).all()
            and np.isfinite(j_cam).all()
            and np.isfinite(j_corner).all()
        ):
            bad = int(
                np.flatnonzero(
                    ~(
                        np.isfinite(res).all(axis=1)
                        & np.isfinite(j_cam).all(axis=(1, 2))
                        & np.isfinite(j_corner).all(axis=(1, 2))
                    )
                )[0]
            )
            raise NumericalFailure(f"non-finite Jacobian at residual {bad}", bad)

        # gradient and Gauss-Newton blocks
        h_cc = np.zeros((c_count, 6, 6))
        g_cam = np.zeros((c_count, 6))
        np.add.at(h_cc, problem.obs_camera, np.einsum("mai,maj->mij", j_cam, j_cam))
        np.add.at(g_cam, problem.obs_camera, np.einsum("mai,ma->mi", j_cam, res))

        h_ll = np.zeros((l_count, 2, 2))
        g_corner = np.zeros((l_count, 2))
        np.add.at(h_ll, problem.obs_corner, np.einsum("mai,maj->mij", j_corner, j_corner))
        np.add.at(g_corner, problem.obs_corner, np.einsum("mai,ma->mi", j_corner, res))

        h_cl = np.zeros((c_count, l_count, 6, 2))
        cross = np.einsum("mai,maj->mij", j_cam, j_corner)
        np.add.at(h_cl, (problem.obs_camera, problem.obs_corner), cross)

        # translation prior: residual (t - t0)/sigma, Jacobian I/sigma
        prior_res = (translations - problem.prior_t0) / problem.sigma_prior[:, None]
        for c in range(c_count):
            inv_s = 1.0 / problem.sigma_prior[c]
            h_cc[c, 3:, 3:] += np.eye(3) * inv_s * inv_s
            g_cam[c, 3:] += prior_res[c] * inv_s
        if opts.sigma_rotation_prior is not None:
            # weak prior, small-angle Jacobian approximated by I/sigma
            inv_s = 1.0 / opts.sigma_rotation_prior
            for c in range(c_count):
                w = matrix_to_axis_angle(
                    rotations[c] @ problem.initial_rotations[c].T
                )
                h_cc[c, :3, :3] += np.eye(3) * inv_s * inv_s
                g_cam[c, :3] += (w * inv_s) * inv_s

        g_max = max(np.abs(g_cam).max(), np.abs(g_corner).max())
        if g_max < opts.gradient_tolerance:
            termination = "gradient_tolerance"
            break

        accepted = False
        while damping <= opts.max_damping:
            step = _schur_step(h_cc, h_cl, h_ll, g_cam, g_corner, damping)
            if step is None:
                damping *= opts.damping_increase
                continue
            d_cam, d_corner = step
            trial_r = np.stack(
                [
                    axis_angle_to_matrix(d_cam[c, :3]) @ rotations[c]
                    for c in range(c_count)
                ]
            )
            trial_t = translations + d_cam[:, 3:]
            trial_x = corners + d_corner
            trial_cost = ev.cost(trial_r, trial_t, trial_x)
            if trial_cost is not None and np.isfinite(trial_cost):
                if trial_cost <= cost:
                    rotations, translations, corners = trial_r, trial_t, trial_x
                    decrease = cost - trial_cost
                    cost = trial_cost
                    trace.append(cost)
                    damping = max(damping * opts.damping_decrease, opts.min_damping)
                    accepted = True
                    if decrease <= opts.cost_tolerance * max(cost, 1e-300):
                        termination = "cost_tolerance"
                    break
                if trial_cost - cost <= opts.cost_tolerance * max(cost, 1e-300):
                    # no meaningful decrease is achievable from here; stay put
                    accepted = True
                    termination = "cost_tolerance"
                    break
            damping *= opts.damping_increase
        if not accepted:
            raise NoProgress(
                f"damping exceeded {opts.max_damping:.1e} at cost {cost:.6e}"
            )
        if termination == "cost_tolerance":
            break

    report = SolveReport(
        iterations=iterations,
        initial_cost=initial_cost,
        final_cost=cost,
        termination=termination,
        cost_trace=trace,
        final_damping=damping,
        num_reprojection_residuals=problem.num_reprojection_residuals,
        num_prior_residuals=problem.num_prior_residuals,
    )
    assert report.final_cost <= report.initial_cost + 1e-300
    extrinsics = {
        cid: RigidTransform(rotations[c], translations[c])
        for c, cid in enumerate(problem.camera_ids)
    }
    corner_out = {key: corners[i].copy() for i, key in enumerate(problem.corner_keys)}
    return extrinsics, corner_out, report


def _schur_step(h_cc, h_cl, h_ll, g_cam, g_corner, damping):
    """One damped normal-equation solve, eliminating corner blocks first."""
    c_count, l_count = h_cc.shape[0], h_ll.shape[0]
    a = h_cc.copy()
    d = h_ll.copy()
    for c in range(c_count):
        diag = np.maximum(np.diagonal(a[c]), 1e-12)
        a[c][np.diag_indices(6)] += damping * diag
    dd = np.maximum(d[:, (0, 1), (0, 1)], 1e-12)
    d[:, 0, 0] += damping * dd[:, 0]
    d[:, 1, 1] += damping * dd[:, 1]

    det = d[:, 0, 0] * d[:, 1, 1] - d[:, 0, 1] * d[:, 1, 0]
    if np.any(det <= 0) or not np.isfinite(det).all():
        return None
    d_inv = np.empty_like(d)
    d_inv[:, 0, 0] = d[:, 1, 1] / det
    d_inv[:, 1, 1] = d[:, 0, 0] / det
    d_inv[:, 0, 1] = -d[:, 0, 1] / det
    d_inv[:, 1, 0] = -d[:, 1, 0] / det

    w = np.transpose(h_cl, (0, 2, 1, 3)).reshape(c_count * 6, l_count, 2)
    wdi = np.einsum("alk,lkj->alj", w, d_inv)
    s = np.zeros((c_count * 6, c_count * 6))
    for c in range(c_count):
        s[c * 6 : (c + 1) * 6, c * 6 : (c + 1) * 6] = a[c]
    s -= np.einsum("alk,blk->ab", wdi, w)

    b_cam = -g_cam.reshape(c_count * 6)
    b_corner = -g_corner
    rhs = b_cam - np.einsum("alk,lk->a", wdi, b_corner)
    try:
        d_cam_flat = np.linalg.solve(s, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.isfinite(d_cam_flat).all():
        return None
    wt_dc = np.einsum("alk,a->lk", w, d_cam_flat)
    d_corner = np.einsum("lkj,lj->lk", d_inv, b_corner - wt_dc)
    return d_cam_flat.reshape(c_count, 6), d_corner


def _first_bad_residual(ev, rotations, translations, corners):
    p_c, _, _ = ev.camera_points(rotations, translations, corners)
    bad = np.flatnonzero(
        ~np.isfinite(p_c).all(axis=1) | (p_c[:, 2] <= _DEPTH_EPSILON)
    )
    return int(bad[0]) if len(bad) else None


def update_camera_from_solution(
    camera: CameraModel, extrinsic: RigidTransform
):
    """Swap in the solved extrinsic and recompose the camera's homography."""
    model = camera.with_extrinsic(extrinsic)
    return model, homography_from_camera(model)


def residual_vector(
    problem: OptimizationProblem,
    rotations=None,
    translations=None,
    corners=None,
    opts: Optional[SolverOptions] = None,
):
    """Stacked residuals (reprojection rows then priors) at a given state.

    Defaults to the problem's stored state. Returns None when any point falls
    behind a camera.
    """
    opts = opts or SolverOptions()
    ev = _Evaluator(problem, opts)
    rotations = problem.rotations if rotations is None else rotations
    translations = problem.translations if translations is None else translations
    corners = problem.corners if corners is None else corners
    evald = ev.reprojection_residuals(rotations, translations, corners)
    if evald is None:
        return None
    res = evald[0]
    sw = ev.robust_weights(res)
    if sw is not None:
        res = res * sw[:, None]
    parts = [res.ravel()]
    for block in ev.prior_residuals(rotations, translations):
        parts.append(np.asarray(block).ravel())
    return np.concatenate(parts)


def dense_jacobian(problem: OptimizationProblem, opts: Optional[SolverOptions] = None):
    """Full dense Jacobian and residual vector (tests and rank checks only).

    Column layout: per-camera 6-dof blocks first (rotation then translation),
    then per-corner 2-dof blocks, matching the solver's block layout.
    """
    opts = opts or SolverOptions()
    ev = _Evaluator(problem, opts)
    blocks = ev.jacobian_blocks(
        problem.rotations, problem.translations, problem.corners
    )
    if blocks is None:
        raise NumericalFailure("infeasible state for dense Jacobian")
    res, j_cam, j_corner = blocks
    m = len(res)
    c_count, l_count = problem.num_cameras, problem.num_corners
    cols = 6 * c_count + 2 * l_count
    rows = 2 * m + 3 * c_count
    jac = np.zeros((rows, cols))
    rvec = np.zeros(rows)
    for i in range(m):
        r0 = 2 * i
        c0 = 6 * problem.obs_camera[i]
        jac[r0 : r0 + 2, c0 : c0 + 6] = j_cam[i]
        l0 = 6 * c_count + 2 * problem.obs_corner[i]
        jac[r0 : r0 + 2, l0 : l0 + 2] = j_corner[i]
        rvec[r0 : r0 + 2] = res[i]
    prior = (problem.translations - problem.prior_t0) / problem.sigma_prior[:, None]
    for c in range(c_count):
        r0 = 2 * m + 3 * c
        jac[r0 : r0 + 3, 6 * c + 3 : 6 * c + 6] = np.eye(3) / problem.sigma_prior[c]
        rvec[r0 : r0 + 3] = prior[c]
    return jac, rvec
