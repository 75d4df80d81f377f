import math

import numpy as np
import pytest

from ipmmap.errors import (
    BehindCamera,
    AtInfinity,
    DegenerateConfiguration,
    InsufficientPairs,
)
from ipmmap.geometry import (
    CameraModel,
    GroundPoint,
    Intrinsics,
    MapPoint,
    PixelPoint,
    RigidTransform,
    axis_angle_to_matrix,
    project,
)
from ipmmap.ipm import (
    Homography,
    PointPair,
    RegionOfInterest,
    apply_ipm,
    apply_ipm_array,
    estimate_homography_dlt,
    homography_from_camera,
    roi_contains,
    roi_contains_array,
)

FRONT_DOWN = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def random_homography(rng):
    while True:
        m = np.eye(3) + rng.normal(scale=0.4, size=(3, 3))
        m[2, :2] = rng.normal(scale=1e-3, size=2)
        if abs(m[2, 2]) > 0.2 and abs(np.linalg.det(m)) > 1e-3:
            return Homography.from_matrix(m)


def nadir_camera(height=1.5, foot=(0.0, 0.0), fx=400.0, fy=400.0, cx=320.0, cy=240.0):
    """Camera looking straight down from `height` above `foot`."""
    # camera x -> vehicle x, camera y -> vehicle -y, camera z (forward) -> vehicle -z
    r = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    t = np.array([foot[0], foot[1], height])
    return CameraModel(
        Intrinsics(fx, fy, cx, cy), RigidTransform(r, t), image_size=(640, 480)
    )


def tilted_camera(rng, height=None, yaw=None):
    """Random forward camera with a downward tilt, guaranteed usable IPM."""
    h = height if height is not None else rng.uniform(0.6, 3.0)
    pitch = rng.uniform(0.2, 1.2)
    if yaw is None:
        yaw = rng.uniform(-math.pi, math.pi)
    r = (
        axis_angle_to_matrix([0, 0, yaw])
        @ FRONT_DOWN
        @ axis_angle_to_matrix([-pitch, 0, 0])
    )
    t = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), h])
    return CameraModel(
        Intrinsics(500.0, 490.0, 320.0, 240.0),
        RigidTransform(r, t),
        image_size=(640, 480),
    )


class TestApplyIpm:
    def test_identity(self):
        g = apply_ipm(Homography.identity(), PixelPoint(3.5, -2.0))
        assert (g.x, g.y) == (3.5, -2.0)

    def test_diagonal_scaling(self):
        h = Homography(np.diag([2.0, 2.0, 1.0]))
        g = apply_ipm(h, PixelPoint(1.0, 1.0))
        assert (g.x, g.y) == (2.0, 2.0)

    def test_round_trip_with_inverse(self):
        rng = np.random.default_rng(10)
        for _ in range(300):
            h = random_homography(rng)
            p = PixelPoint(rng.uniform(-50, 50), rng.uniform(-50, 50))
            try:
                g = apply_ipm(h, p)
                back = apply_ipm(h.inverse(), PixelPoint(g.x, g.y))
            except AtInfinity:
                continue
            assert math.hypot(back.x - p.u, back.y - p.v) < 1e-9

    def test_at_infinity(self):
        h = Homography(np.array([[1.0, 0, 0], [0, 1.0, 0], [-1.0, 0, 1.0]]))
        with pytest.raises(AtInfinity):
            apply_ipm(h, PixelPoint(1.0, 0.0))

    def test_collinearity_preserved(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            h = random_homography(rng)
            a = np.array([rng.uniform(-20, 20), rng.uniform(-20, 20)])
            d = rng.normal(size=2)
            pts = [a + s * d for s in (0.0, 0.7, 2.3)]
            try:
                ground = apply_ipm_array(h, np.array(pts))
            except AtInfinity:
                continue
            # residual of the middle point to the line through the outer two
            p0, p1, p2 = ground
            n = p2 - p0
            n /= np.linalg.norm(n)
            resid = (p1 - p0) - np.dot(p1 - p0, n) * n
            assert np.linalg.norm(resid) < 1e-9

    def test_array_matches_scalar(self):
        rng = np.random.default_rng(12)
        h = random_homography(rng)
        pix = rng.uniform(-30, 30, size=(40, 2))
        batch = apply_ipm_array(h, pix)
        for row, (u, v) in zip(batch, pix):
            g = apply_ipm(h, PixelPoint(u, v))
            assert np.allclose(row, [g.x, g.y], atol=1e-12)


class TestHomographyType:
    def test_requires_normalization(self):
        with pytest.raises(ValueError):
            Homography(np.diag([1.0, 1.0, 2.0]))

    def test_rejects_singular(self):
        m = np.ones((3, 3))
        m[2, 2] = 1.0
        with pytest.raises(ValueError):
            Homography(m)


def pairs_from_homography(h, pixels):
    out = []
    for u, v in pixels:
        g = apply_ipm(h, PixelPoint(u, v))
        out.append(PointPair(PixelPoint(u, v), g))
    return out


class TestEstimateHomographyDlt:
    def test_unit_square_identity(self):
        pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        pairs = [PointPair(PixelPoint(u, v), GroundPoint(u, v)) for u, v in pts]
        h = estimate_homography_dlt(pairs)
        assert np.abs(h.h - np.eye(3)).max() < 1e-10

    def test_exact_recovery(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            truth = random_homography(rng)
            pixels = rng.uniform(0, 640, size=(10, 2))
            pairs = pairs_from_homography(truth, pixels)
            est = estimate_homography_dlt(pairs)
            err = np.linalg.norm(est.h - truth.h) / np.linalg.norm(truth.h)
            assert err < 1e-9

    def test_insufficient_pairs(self):
        pairs = [
            PointPair(PixelPoint(0, 0), GroundPoint(0, 0)),
            PointPair(PixelPoint(1, 0), GroundPoint(1, 0)),
            PointPair(PixelPoint(0, 1), GroundPoint(0, 1)),
        ]
        with pytest.raises(InsufficientPairs):
            estimate_homography_dlt(pairs)

    def test_collinear_pixels_degenerate(self):
        pairs = [
            PointPair(PixelPoint(float(i), 2.0 * i), GroundPoint(float(i), i + 1.0))
            for i in range(6)
        ]
        with pytest.raises(DegenerateConfiguration):
            estimate_homography_dlt(pairs)

    def test_duplicate_points_degenerate(self):
        base = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]
        pts = base + [base[0]]
        pairs = [PointPair(PixelPoint(u, v), GroundPoint(u, v)) for u, v in pts]
        with pytest.raises(DegenerateConfiguration):
            estimate_homography_dlt(pairs)

    def test_similarity_invariance_of_pixels(self):
        # normalization makes the estimate invariant to pixel-frame similarity
        rng = np.random.default_rng(14)
        truth = random_homography(rng)
        pixels = rng.uniform(0, 640, size=(12, 2))
        pairs = pairs_from_homography(truth, pixels)
        est = estimate_homography_dlt(pairs)

        ang = 0.7
        c, s = math.cos(ang), math.sin(ang)
        sim = np.array([[2.0 * c, -2.0 * s, 100.0], [2.0 * s, 2.0 * c, -40.0], [0, 0, 1.0]])
        moved = (np.column_stack([pixels, np.ones(12)]) @ sim.T)[:, :2]
        pairs2 = [
            PointPair(PixelPoint(u, v), p.ground)
            for (u, v), p in zip(moved, pairs)
        ]
        est2 = estimate_homography_dlt(pairs2)
        recomposed = est2.h @ sim
        recomposed /= recomposed[2, 2]
        assert np.abs(recomposed - est.h).max() < 1e-9

    def test_noisy_pairs_monte_carlo(self):
        # ground reprojection error under 0.5 px noise stays within 5x of the
        # noise-free oracle error, which is 0 here, so bound via noise scale
        rng = np.random.default_rng(15)
        cam = nadir_camera(height=2.0)
        truth = homography_from_camera(cam)
        # pixels covering a 2 m x 2 m ground span under the nadir camera
        span = []
        for x in np.linspace(-1.0, 1.0, 5):
            for y in np.linspace(-1.0, 1.0, 2):
                pix = project(MapPoint(x, y, 0.0), RigidTransform.identity(), cam)
                span.append((pix.u, pix.v))
        span = np.array(span)
        sigma = 0.5
        # one ground meter is fx/height = 200 px; sigma in ground units:
        ground_sigma = sigma * 2.0 / 400.0
        errs = []
        for _ in range(100):
            noisy = span + rng.normal(scale=sigma, size=span.shape)
            pairs = [
                PointPair(PixelPoint(u, v), apply_ipm(truth, PixelPoint(u0, v0)))
                for (u, v), (u0, v0) in zip(noisy, span)
            ]
            est = estimate_homography_dlt(pairs)
            test_pix = span
            got = apply_ipm_array(est, test_pix)
            want = apply_ipm_array(truth, test_pix)
            errs.append(np.sqrt(np.mean(np.sum((got - want) ** 2, axis=1))))
        rms = float(np.mean(errs))
        assert rms < 5.0 * ground_sigma


class TestHomographyFromCamera:
    def test_nadir_closed_form(self):
        cam = nadir_camera(height=1.5, foot=(0.4, -0.2))
        h = homography_from_camera(cam)
        g = apply_ipm(h, PixelPoint(320.0, 240.0))
        assert g.x == pytest.approx(0.4, abs=1e-9)
        assert g.y == pytest.approx(-0.2, abs=1e-9)

    def test_inverts_projection_on_ground(self):
        rng = np.random.default_rng(16)
        pose = RigidTransform.identity()
        checked = 0
        for _ in range(100):
            cam = tilted_camera(rng)
            h = homography_from_camera(cam)
            # a ground point inside the camera's forward view
            for _ in range(10):
                g = rng.uniform(-6, 6, size=2)
                try:
                    pix = project(MapPoint(g[0], g[1], 0.0), pose, cam)
                except BehindCamera:
                    continue
                back = apply_ipm(h, pix)
                assert math.hypot(back.x - g[0], back.y - g[1]) < 1e-9
                checked += 1
        assert checked > 100

    def test_height_scales_ground_coordinates(self):
        cam = nadir_camera(height=1.5, foot=(0.0, 0.0))
        taller = nadir_camera(height=1.65, foot=(0.0, 0.0))
        h1 = homography_from_camera(cam)
        h2 = homography_from_camera(taller)
        p = PixelPoint(400.0, 300.0)
        g1 = apply_ipm(h1, p)
        g2 = apply_ipm(h2, p)
        assert g2.x == pytest.approx(1.1 * g1.x, rel=1e-9)
        assert g2.y == pytest.approx(1.1 * g1.y, rel=1e-9)

    def test_matches_dlt_from_pairs(self):
        rng = np.random.default_rng(17)
        cam = tilted_camera(rng, height=1.8, yaw=0.0)
        truth = homography_from_camera(cam)
        pose = RigidTransform.identity()
        pairs = []
        for x in np.linspace(2.0, 5.0, 5):
            for y in (-1.5, 1.5):
                pix = project(MapPoint(x, y, 0.0), pose, cam)
                pairs.append(PointPair(pix, GroundPoint(x, y)))
        est = estimate_homography_dlt(pairs)
        assert np.abs(est.h - truth.h).max() < 1e-7


def winding_number_contains(polygon, u, v):
    """Brute-force winding-number oracle, boundary counts as inside."""
    n = len(polygon)
    wn = 0
    for i in range(n):
        x0, y0 = polygon[i]
        x1, y1 = polygon[(i + 1) % n]
        cross = (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0)
        on_segment = (
            abs(cross) < 1e-12
            and min(x0, x1) - 1e-12 <= u <= max(x0, x1) + 1e-12
            and min(y0, y1) - 1e-12 <= v <= max(y0, y1) + 1e-12
        )
        if on_segment:
            return True
        if y0 <= v:
            if y1 > v and cross > 0:
                wn += 1
        elif y1 <= v and cross < 0:
            wn -= 1
    return wn != 0


class TestRoi:
    def square(self):
        return RegionOfInterest.from_points(
            [
                PixelPoint(0.0, 0.0),
                PixelPoint(100.0, 0.0),
                PixelPoint(100.0, 100.0),
                PixelPoint(0.0, 100.0),
            ]
        )

    def test_interior(self):
        assert roi_contains(self.square(), PixelPoint(50.0, 50.0))

    def test_boundary_inside_exterior_out(self):
        roi = self.square()
        assert roi_contains(roi, PixelPoint(100.0, 50.0))
        assert not roi_contains(roi, PixelPoint(100.001, 50.0))

    def test_against_winding_number_oracle(self):
        rng = np.random.default_rng(18)
        pts = rng.uniform(0, 100, size=(9, 2))
        roi = RegionOfInterest.from_points([PixelPoint(u, v) for u, v in pts])
        poly = [(p.u, p.v) for p in roi.polygon]
        queries = rng.uniform(-20, 120, size=(10_000, 2))
        batch = roi_contains_array(roi, queries)
        for (u, v), got in zip(queries, batch):
            assert roi_contains(roi, PixelPoint(u, v)) == got
            assert winding_number_contains(poly, u, v) == got

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            RegionOfInterest(
                (PixelPoint(0, 0), PixelPoint(1, 1), PixelPoint(2, 2))
            )

    def test_hull_drops_interior_points(self):
        pts = [
            PixelPoint(0.0, 0.0),
            PixelPoint(10.0, 0.0),
            PixelPoint(10.0, 10.0),
            PixelPoint(0.0, 10.0),
            PixelPoint(5.0, 5.0),
        ]
        roi = RegionOfInterest.from_points(pts)
        assert len(roi.polygon) == 4
