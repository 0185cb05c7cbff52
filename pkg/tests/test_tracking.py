"""Grounding chain: mask sampling, depth lifting, rigid fusion, outlier
removal, and trajectory smoothing.

Fixture-backed expectations use the analytic capture generator from the
providers module, whose embedded ground truth serves as the oracle.
"""

from __future__ import annotations

import numpy as np
import pytest

from demogen.errors import InsufficientCorrespondences, MaskTooSmall
from demogen.geometry import CameraIntrinsics, Pose, pose_error
from demogen.providers import NoiseSpec, linear_motion_fixture, synth_fixture
from demogen.tracking import (DepthFrame, FusionParams, MaskImage,
                              ObjectTrajectory, TrackBundle,
                              fuse_rigid_trajectory, lift_tracks, read_depth,
                              read_mask, read_tracks, read_trajectory,
                              remove_outlier_tracks, sample_mask_points,
                              smooth_trajectory, write_depth, write_mask,
                              write_tracks, write_trajectory)

K = CameraIntrinsics(fx=60.0, fy=60.0, cx=32.0, cy=24.0, width=64, height=48)


def _full_mask(width=64, height=48) -> MaskImage:
    return MaskImage(width, height, np.ones((height, width), dtype=np.uint8))


def _flat_depth(value=1.0, width=64, height=48) -> DepthFrame:
    return DepthFrame(width, height, np.full((height, width), value))


def _static_bundle(num_frames=5, n=9) -> TrackBundle:
    """Static grid of points over a constant 1 m depth plane."""
    us = np.linspace(8, 56, 3)
    vs = np.linspace(8, 40, 3)
    uv0 = np.array([(u, v) for v in vs for u in us])[:n]
    uv = np.repeat(uv0[None, :, :], num_frames, axis=0)
    visible = np.ones((num_frames, n), dtype=bool)
    depth = [_flat_depth() for _ in range(num_frames)]
    return TrackBundle(uv=uv, visible=visible, intrinsics=K, depth=depth,
                       mask=_full_mask())


def _traj(poses, n_points=8) -> ObjectTrajectory:
    return ObjectTrajectory(poses=list(poses),
                            per_frame_rms=np.zeros(len(poses)),
                            inlier_point_ids=frozenset(range(n_points)),
                            dropped_point_ids=frozenset())


def _noiseless_fixture(seed=0, num_frames=40, yaw_deg=20.0):
    spec = linear_motion_fixture(num_frames=num_frames, yaw_deg=yaw_deg,
                                 seed=seed)
    return synth_fixture(spec)


class TestSampleMaskPoints:
    def test_full_frame_sixteen_points(self):
        mask = MaskImage(100, 100, np.ones((100, 100), dtype=np.uint8))
        pts = sample_mask_points(mask, n=16, seed=0)
        assert pts.shape == (16, 2)
        assert np.all(pts >= 0) and np.all(pts[:, 0] < 100) and np.all(pts[:, 1] < 100)
        assert len({(round(float(u), 6), round(float(v), 6))
                    for u, v in pts}) == 16

    def test_empty_mask(self):
        mask = MaskImage(50, 50, np.zeros((50, 50), dtype=np.uint8))
        with pytest.raises(MaskTooSmall):
            sample_mask_points(mask, n=4, seed=0)

    def test_l_shaped_mask_membership_and_determinism(self):
        data = np.zeros((60, 60), dtype=np.uint8)
        data[35:60, 0:60] = 1   # horizontal bar
        data[0:60, 0:20] = 1    # vertical bar
        mask = MaskImage(60, 60, data)
        pts = sample_mask_points(mask, n=32, seed=3)
        assert pts.shape == (32, 2)
        for u, v in pts:
            assert mask.contains(float(u), float(v))
        again = sample_mask_points(mask, n=32, seed=3)
        assert np.array_equal(pts, again)

    def test_oversubscribed_mask(self):
        data = np.zeros((20, 20), dtype=np.uint8)
        data[9:11, 9:11] = 1  # 4 pixels cannot host 64 grid cells
        mask = MaskImage(20, 20, data)
        with pytest.raises(MaskTooSmall):
            sample_mask_points(mask, n=64, seed=0)


class TestLiftTracks:
    def test_constant_plane_static_points(self):
        bundle = _static_bundle()
        lifted = lift_tracks(bundle)
        assert lifted.valid.all()
        for t in range(1, bundle.num_frames):
            assert np.array_equal(lifted.points[t], lifted.points[0])

    def test_principal_pixel_depth_two(self):
        bundle = _static_bundle(num_frames=1, n=9)
        bundle.uv[0, 0] = (K.cx, K.cy)
        bundle.depth[0] = _flat_depth(2.0)
        lifted = lift_tracks(bundle)
        assert np.allclose(lifted.points[0, 0], (0.0, 0.0, 2.0), atol=1e-12)

    def test_invisible_points_flagged(self):
        bundle = _static_bundle()
        bundle.visible[2, 4] = False
        lifted = lift_tracks(bundle)
        assert not lifted.valid[2, 4]
        assert lifted.valid[2, 3]

    def test_invalid_depth_neighbor_rejected(self):
        bundle = _static_bundle()
        values = bundle.depth[1].values.copy()
        u, v = bundle.uv[1, 0]
        values[int(v), int(u)] = 0.0  # hole under the bilinear footprint
        bundle.depth[1] = DepthFrame(K.width, K.height, values)
        lifted = lift_tracks(bundle)
        assert not lifted.valid[1, 0]

    def test_fixture_lift_matches_ground_truth(self):
        data = _noiseless_fixture(seed=4)
        lifted = lift_tracks(data.bundle)
        gt = data.gt_motion
        # frame-0 points carried by the ground-truth motion must land on
        # the lifted points wherever the sample is valid
        for t in (10, 25, len(gt.poses) - 1):
            both = lifted.valid[0] & lifted.valid[t]
            assert both.sum() >= 8
            moved = gt.poses[t].apply(lifted.points[0][both])
            err = np.linalg.norm(moved - lifted.points[t][both], axis=1)
            assert err.max() < 1e-6


class TestFuseRigidTrajectory:
    def test_static_scene_identity(self):
        lifted = lift_tracks(_static_bundle())
        traj = fuse_rigid_trajectory(lifted)
        assert len(traj.poses) == 5
        for pose in traj.poses:
            assert np.linalg.norm(pose.position) < 1e-9
            assert abs(1.0 - pose.quat[0]) < 1e-9

    def test_pure_translation_fixture(self):
        spec = linear_motion_fixture(start_xy=(-0.1, -0.05),
                                     end_xy=(0.1, 0.07), yaw_deg=0.0,
                                     num_frames=30, seed=5)
        data = synth_fixture(spec)
        traj = fuse_rigid_trajectory(lift_tracks(data.bundle))
        for got, want in zip(traj.poses, data.gt_motion.poses):
            dp, _ = pose_error(got, want)
            assert dp < 1e-6

    def test_corrupted_tracks_survive_fusion(self):
        noise = NoiseSpec(corrupt_fraction=0.2)
        clean = synth_fixture(linear_motion_fixture(num_frames=30, seed=6))
        dirty = synth_fixture(linear_motion_fixture(num_frames=30, seed=6,
                                                    noise=noise))
        assert dirty.corrupted_ids
        params = FusionParams(inlier_threshold_m=0.005)
        base = fuse_rigid_trajectory(lift_tracks(clean.bundle), params)
        traj = fuse_rigid_trajectory(lift_tracks(dirty.bundle), params)
        traj = remove_outlier_tracks(traj, lift_tracks(dirty.bundle),
                                     params=params)
        assert dirty.corrupted_ids <= traj.dropped_point_ids
        worst_base = max(pose_error(g, w)[0] for g, w in
                         zip(base.poses, clean.gt_motion.poses))
        worst = max(pose_error(g, w)[0] for g, w in
                    zip(traj.poses, dirty.gt_motion.poses))
        assert worst < max(2.0 * worst_base, 1e-9)

    def test_insufficient_correspondences(self):
        bundle = _static_bundle(num_frames=4, n=9)
        bundle.visible[2, :] = False
        bundle.visible[2, 0] = True  # one survivor is not enough
        with pytest.raises(InsufficientCorrespondences) as err:
            fuse_rigid_trajectory(lift_tracks(bundle))
        assert err.value.frame == 2

    def test_pose_zero_is_identity(self):
        data = _noiseless_fixture(seed=7, num_frames=20)
        traj = fuse_rigid_trajectory(lift_tracks(data.bundle))
        assert np.linalg.norm(traj.poses[0].position) == 0.0
        assert traj.poses[0].quat[0] == 1.0


class TestRemoveOutlierTracks:
    def test_all_clean_zero_drops(self):
        data = _noiseless_fixture(seed=8, num_frames=25)
        lifted = lift_tracks(data.bundle)
        traj = fuse_rigid_trajectory(lifted)
        out = remove_outlier_tracks(traj, lifted)
        assert out.dropped_point_ids == frozenset()
        for a, b in zip(traj.poses, out.poses):
            dp, da = pose_error(a, b)
            assert dp < 1e-9 and da < 1e-9

    def test_single_teleported_track_dropped(self):
        data = _noiseless_fixture(seed=9, num_frames=30)
        bundle = data.bundle
        pid = int(np.flatnonzero(lift_tracks(bundle).valid[0])[0])
        # that track jumps 15 px from frame 10 onward and stays there
        width = bundle.intrinsics.width
        bundle.uv[10:, pid, 0] += 15.0
        np.clip(bundle.uv[:, pid, 0], 0, width - 1e-6,
                out=bundle.uv[:, pid, 0])
        lifted = lift_tracks(bundle)
        traj = fuse_rigid_trajectory(lifted)
        out = remove_outlier_tracks(traj, lifted)
        assert out.dropped_point_ids == frozenset({pid})

    def test_vacuous_thresholds_no_drops(self):
        data = _noiseless_fixture(seed=10, num_frames=20)
        lifted = lift_tracks(data.bundle)
        traj = fuse_rigid_trajectory(lifted)
        out = remove_outlier_tracks(traj, lifted, threshold_scale=np.inf,
                                    abs_threshold_m=np.inf)
        assert out.dropped_point_ids == frozenset()
        assert out.poses is traj.poses


class TestSmoothTrajectory:
    def test_window_one_identity(self):
        data = _noiseless_fixture(seed=11, num_frames=15)
        traj = fuse_rigid_trajectory(lift_tracks(data.bundle))
        out = smooth_trajectory(traj, window=1)
        assert out is traj

    def test_even_window_rejected(self):
        traj = _traj([Pose.identity()] * 6)
        with pytest.raises(ValueError):
            smooth_trajectory(traj, window=4)

    def test_linear_translation_is_fixed_point(self):
        velocity = np.array([0.01, -0.004, 0.002])
        poses = [Pose(velocity * i, np.array([1.0, 0, 0, 0]))
                 for i in range(20)]
        out = smooth_trajectory(_traj(poses), window=5)
        for i, pose in enumerate(out.poses):
            assert np.linalg.norm(pose.position - velocity * i) < 1e-9
            assert abs(1.0 - pose.quat[0]) < 1e-15

    def test_gaussian_noise_monte_carlo(self):
        """Averaging 5 i.i.d. translation samples must cut the RMS error
        in every one of 100 seeded trials."""
        t = 60
        velocity = np.array([0.004, 0.002, -0.001])
        gt = np.stack([velocity * i for i in range(t)])
        wins = 0
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            noise = rng.normal(scale=0.003, size=(t, 3))
            noise[0] = 0.0  # fused trajectories always anchor frame 0
            poses = [Pose(gt[i] + noise[i], np.array([1.0, 0, 0, 0]))
                     for i in range(t)]
            smoothed = smooth_trajectory(_traj(poses), window=5)
            raw_rms = np.sqrt(np.mean(noise ** 2))
            res = np.stack([smoothed.poses[i].position - gt[i]
                            for i in range(t)])
            smooth_rms = np.sqrt(np.mean(res ** 2))
            wins += smooth_rms < raw_rms
        assert wins == 100

    def test_never_increases_max_step(self):
        rng = np.random.default_rng(12)
        poses = [Pose(np.cumsum(rng.normal(scale=0.01, size=(1, 3)), axis=0)[0],
                      np.array([1.0, 0, 0, 0]))]
        position = poses[0].position
        for _ in range(39):
            position = position + rng.normal(scale=0.01, size=3)
            poses.append(Pose(position, np.array([1.0, 0, 0, 0])))
        traj = _traj(poses)
        out = smooth_trajectory(traj, window=7)

        def max_step(t):
            return max(np.linalg.norm(t.poses[i + 1].position
                                      - t.poses[i].position)
                       for i in range(len(t.poses) - 1))

        assert max_step(out) <= max_step(traj) + 1e-12

    def test_smoothed_pose_zero_identity(self):
        data = _noiseless_fixture(seed=13, num_frames=20)
        traj = smooth_trajectory(
            fuse_rigid_trajectory(lift_tracks(data.bundle)), window=5)
        assert np.linalg.norm(traj.poses[0].position) == 0.0
        assert traj.poses[0].quat[0] == 1.0


class TestEndToEndNoiseless:
    def test_full_chain_matches_ground_truth(self):
        data = _noiseless_fixture(seed=14, num_frames=50, yaw_deg=25.0)
        lifted = lift_tracks(data.bundle)
        traj = fuse_rigid_trajectory(lifted)
        traj = remove_outlier_tracks(traj, lifted)
        traj = smooth_trajectory(traj, window=5)
        for got, want in zip(traj.poses, data.gt_motion.poses):
            dp, da = pose_error(got, want)
            assert dp < 1e-4
            assert np.degrees(da) < 0.05


class TestFileFormats:
    def test_depth_round_trip_quantizes_to_float32(self, tmp_path):
        values = np.linspace(0.5, 2.5, 64 * 48).reshape(48, 64)
        frame = DepthFrame(64, 48, values)
        path = str(tmp_path / "depth_0000.dpf")
        write_depth(frame, path)
        again = read_depth(path)
        assert again.width == 64 and again.height == 48
        assert np.array_equal(again.values,
                              values.astype(np.float32).astype(np.float64))

    def test_mask_round_trip(self, tmp_path):
        data = (np.arange(30 * 20).reshape(20, 30) % 3 == 0).astype(np.uint8)
        mask = MaskImage(30, 20, data)
        path = str(tmp_path / "mask.msk")
        write_mask(mask, path)
        again = read_mask(path)
        assert np.array_equal(again.data, mask.data)

    def test_tracks_round_trip(self, tmp_path):
        bundle = _static_bundle(num_frames=3, n=6)
        path = str(tmp_path / "tracks.jsonl")
        write_tracks(bundle.uv, bundle.visible, K, path)
        uv, visible, k = read_tracks(path)
        assert np.allclose(uv, bundle.uv, atol=1e-9)
        assert np.array_equal(visible, bundle.visible)
        assert k == K

    def test_trajectory_round_trip(self, tmp_path):
        data = _noiseless_fixture(seed=15, num_frames=10)
        traj = fuse_rigid_trajectory(lift_tracks(data.bundle))
        camera = Pose.from_axis_angle((0, 1, 0), 1.0, translation=(0.1, 0.2, 0.9))
        path = str(tmp_path / "trajectory.json")
        write_trajectory(traj, path, camera_pose=camera)
        again, cam = read_trajectory(path)
        assert len(again.poses) == len(traj.poses)
        dp, da = pose_error(cam, camera)
        assert dp < 1e-8 and da < 1e-6
        write_trajectory(again, str(tmp_path / "again.json"), camera_pose=cam)
        assert (tmp_path / "trajectory.json").read_text() \
            == (tmp_path / "again.json").read_text()
