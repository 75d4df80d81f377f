import numpy as np
import pytest

from ipmmap.errors import FormatError
from ipmmap.formats import (
    read_camera_models,
    read_detections,
    read_ground_truth,
    read_homography,
    read_map,
    read_point_pairs,
    read_poses,
    write_camera_models,
    write_detections,
    write_ground_truth,
    write_homography,
    write_map,
    write_point_pairs,
    write_poses,
)
from ipmmap.geometry import rotation_angle
from ipmmap.mapbuild import CameraSetup, MapState, PipelineConfig
from ipmmap.simulate import (
    FieldSpec,
    NoiseSpec,
    SceneSpec,
    generate_scene,
    render_detections,
)


@pytest.fixture
def scene():
    spec = SceneSpec(
        field=FieldSpec(extent_x=8, extent_y=8, spacing=4),
        noise=NoiseSpec(pixel_sigma=0.3),
        seed=60,
    )
    truth, poses = generate_scene(spec)
    dets = render_detections(truth, poses, spec)
    return truth, poses, dets


class TestPoses:
    def test_round_trip(self, tmp_path, scene):
        truth, poses, _ = scene
        path = tmp_path / "poses.txt"
        write_poses(path, poses)
        back = read_poses(path)
        assert len(back) == len(poses)
        for a, b in zip(poses, back):
            assert a.frame == b.frame
            assert abs(a.timestamp - b.timestamp) < 1e-9
            assert np.abs(a.pose.translation - b.pose.translation).max() < 1e-9
            assert rotation_angle(a.pose.rotation @ b.pose.rotation.T) < 1e-9

    def test_bad_field_count(self, tmp_path):
        path = tmp_path / "poses.txt"
        path.write_text("0 0.0 1.0 2.0\n")
        with pytest.raises(FormatError) as err:
            read_poses(path)
        assert err.value.line_number == 1

    def test_quaternion_tolerance(self, tmp_path):
        path = tmp_path / "poses.txt"
        # slightly off-unit: renormalized silently
        path.write_text("0 0.0 0 0 0 1.0000004 0 0 0\n")
        assert len(read_poses(path)) == 1
        # badly off-unit: hard error
        path.write_text("0 0.0 0 0 0 1.01 0 0 0\n")
        with pytest.raises(FormatError):
            read_poses(path)

    def test_duplicate_frame(self, tmp_path):
        path = tmp_path / "poses.txt"
        path.write_text("0 0.0 0 0 0 1 0 0 0\n0 0.1 1 0 0 1 0 0 0\n")
        with pytest.raises(FormatError) as err:
            read_poses(path)
        assert err.value.line_number == 2

    def test_comments_ignored(self, tmp_path):
        path = tmp_path / "poses.txt"
        path.write_text("# hello\n0 0.0 0 0 0 1 0 0 0  # trailing\n\n")
        assert len(read_poses(path)) == 1


class TestDetections:
    def test_round_trip(self, tmp_path, scene):
        _, _, dets = scene
        path = tmp_path / "det.txt"
        write_detections(path, dets)
        back = read_detections(path)
        assert len(back) == len(dets)
        for a, b in zip(dets, back):
            assert (a.frame, a.camera_id) == (b.frame, b.camera_id)
            assert np.abs(a.pixels - b.pixels).max() < 1e-6

    def test_bad_line_number_reported(self, tmp_path):
        path = tmp_path / "det.txt"
        path.write_text(
            "0 front 1 2 3 4 5 6 7 8\n1 front 1 2 3\n"
        )
        with pytest.raises(FormatError) as err:
            read_detections(path)
        assert err.value.line_number == 2


class TestPointPairs:
    def test_round_trip(self, tmp_path, scene):
        truth, _, _ = scene
        pairs = truth.cameras["front"].calibration_pairs
        path = tmp_path / "pairs.txt"
        write_point_pairs(path, pairs)
        back = read_point_pairs(path)
        assert len(back) == len(pairs)
        for a, b in zip(pairs, back):
            assert abs(a.pixel.u - b.pixel.u) < 1e-6
            assert abs(a.ground.x - b.ground.x) < 1e-9


class TestCameraModels:
    def test_round_trip_with_roi(self, tmp_path, scene):
        truth, _, _ = scene
        models = [tc.model for tc in truth.cameras.values()]
        rois = {cid: tc.roi for cid, tc in truth.cameras.items()}
        path = tmp_path / "cameras.txt"
        write_camera_models(path, models, rois)
        cams, rois_back = read_camera_models(path)
        assert set(cams) == set(truth.cameras)
        for cid, model in cams.items():
            want = truth.cameras[cid].model
            assert model.image_size == want.image_size
            assert abs(model.intrinsics.fx - want.intrinsics.fx) < 1e-6
            assert (
                rotation_angle(
                    model.extrinsic.rotation @ want.extrinsic.rotation.T
                )
                < 1e-8
            )
            assert (
                np.abs(model.extrinsic.translation - want.extrinsic.translation).max()
                < 1e-9
            )
            got_roi = rois_back[cid].as_array()
            want_roi = rois[cid].as_array()
            assert got_roi.shape == want_roi.shape
            assert np.abs(got_roi - want_roi).max() < 1e-5

    def test_missing_key(self, tmp_path):
        path = tmp_path / "cameras.txt"
        path.write_text("camera_id front\nfx 700\n")
        with pytest.raises(FormatError) as err:
            read_camera_models(path)
        assert "missing key" in str(err.value)

    def test_key_before_block(self, tmp_path):
        path = tmp_path / "cameras.txt"
        path.write_text("fx 700\n")
        with pytest.raises(FormatError):
            read_camera_models(path)


class TestHomography:
    def test_round_trip(self, tmp_path, scene):
        truth, _, _ = scene
        h = truth.cameras["front"].homography
        path = tmp_path / "h.txt"
        write_homography(path, h)
        back = read_homography(path)
        assert np.abs(back.h - h.h).max() < 1e-12

    def test_wrong_shape(self, tmp_path):
        path = tmp_path / "h.txt"
        path.write_text("1 0 0\n0 1 0\n")
        with pytest.raises(FormatError):
            read_homography(path)


class TestMapFiles:
    def test_map_round_trip(self, tmp_path):
        setup = CameraSetup("front", __import__("ipmmap.ipm", fromlist=["Homography"]).Homography.identity())
        state = MapState({"front": setup}, PipelineConfig())
        from ipmmap.association import DetectedMarking

        corners = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        det = DetectedMarking(corners, np.zeros((4, 2)), 0, "front")
        state.new_marking(det)
        path = tmp_path / "map.txt"
        write_map(path, state)
        back = read_map(path)
        assert set(back) == {0}
        quad, counts = back[0]
        assert np.abs(quad - corners).max() < 1e-9
        assert counts.tolist() == [1, 1, 1, 1]

    def test_ground_truth_round_trip(self, tmp_path, scene):
        truth, _, _ = scene
        path = tmp_path / "gt.txt"
        write_ground_truth(path, truth.marking_corners)
        back = read_ground_truth(path)
        assert np.abs(back - truth.marking_corners).max() < 1e-9

    def test_incomplete_marking(self, tmp_path):
        path = tmp_path / "gt.txt"
        path.write_text("0 0 1 1\n0 1 2 2\n0 2 3 3\n")
        with pytest.raises(FormatError):
            read_ground_truth(path)
