import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geodistill.geometry import (
    EDGE_CORNER_ADJACENCY,
    BevBox,
    Box3D,
    PointCloud,
    extract_keypoints,
    project_to_bev,
    voxelize_box,
    wrap_angle,
)


def random_box(rng, max_offset=50.0):
    return Box3D(
        center=rng.uniform(-max_offset, max_offset, 3),
        dims=rng.uniform(0.5, 6.0, 3),
        yaw=rng.uniform(-math.pi, math.pi),
    )


class TestWrapAngle:
    def test_boundaries(self):
        assert wrap_angle(math.pi) == math.pi
        assert wrap_angle(-math.pi) == math.pi
        assert wrap_angle(0.0) == 0.0
        assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)

    @given(st.floats(-50.0, 50.0))
    def test_range_and_congruence(self, theta):
        w = wrap_angle(theta)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-9)
        assert math.isclose(math.sin(w), math.sin(theta), abs_tol=1e-9)


class TestPointCloud:
    def test_rejects_nan(self):
        pts = np.zeros((3, 4), dtype=np.float32)
        pts[1, 2] = np.nan
        with pytest.raises(ValueError):
            PointCloud(pts)

    def test_rejects_bad_intensity(self):
        pts = np.zeros((2, 4), dtype=np.float32)
        pts[0, 3] = 1.5
        with pytest.raises(ValueError):
            PointCloud(pts)

    def test_empty_ok(self):
        assert len(PointCloud.empty()) == 0


class TestBoxes:
    def test_yaw_normalized_at_construction(self):
        box = Box3D(center=(0, 0, 0), dims=(1, 1, 1), yaw=3 * math.pi)
        assert box.yaw == pytest.approx(math.pi)
        assert -math.pi < box.yaw <= math.pi

    def test_rejects_nonpositive_dims(self):
        with pytest.raises(ValueError):
            Box3D(center=(0, 0, 0), dims=(1, 0, 1), yaw=0.0)

    def test_bev_corners_consistent(self):
        box = BevBox(center=(1, 1), dims=(2, 1), yaw=0.3)
        c, s = math.cos(0.3), math.sin(0.3)
        expected = []
        for ux, uy in [(1, -0.5), (-1, -0.5), (-1, 0.5), (1, 0.5)]:
            expected.append((c * ux - s * uy + 1, s * ux + c * uy + 1))
        assert np.allclose(box.corners(), expected, atol=1e-9)


class TestProjectToBev:
    def test_drops_z_and_height(self):
        box = Box3D(center=(0, 0, 0), dims=(4, 2, 1.5), yaw=0.0)
        bev = project_to_bev(box)
        assert bev.center.tolist() == [0.0, 0.0]
        assert bev.dims.tolist() == [4.0, 2.0]
        assert bev.yaw == 0.0

    def test_pose_preserved(self):
        box = Box3D(center=(3, -4, 1), dims=(4, 2, 1.5), yaw=math.pi / 2)
        bev = project_to_bev(box)
        assert bev.center.tolist() == [3.0, -4.0]
        assert bev.yaw == box.yaw

    def test_corners_match_top_face(self):
        box = Box3D(center=(1, 1, 0), dims=(2, 1, 1), yaw=0.3)
        bev = project_to_bev(box)
        top = box.to_world(
            np.array([[1, -0.5, 0.5], [-1, -0.5, 0.5], [-1, 0.5, 0.5], [1, 0.5, 0.5]])
        )
        assert np.allclose(bev.corners(), top[:, :2], atol=1e-12)


class TestKeypoints:
    def test_axis_aligned_layout(self):
        kp = extract_keypoints(BevBox(center=(0, 0), dims=(4, 2), yaw=0.0))
        assert np.allclose(kp.center, [0, 0])
        assert np.allclose(
            kp.edge_midpoints, [[2, 0], [0, -1], [-2, 0], [0, 1]], atol=1e-12
        )
        assert np.allclose(
            kp.corners, [[2, -1], [-2, -1], [-2, 1], [2, 1]], atol=1e-12
        )

    def test_quarter_turn(self):
        kp = extract_keypoints(BevBox(center=(0, 0), dims=(4, 2), yaw=math.pi / 2))
        # canonical front-left corner (2, 1) lands at (-1, 2)
        assert np.allclose(kp.points[8], [-1, 2], atol=1e-12)

    def test_first_keypoint_is_center(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            box = project_to_bev(random_box(rng))
            kp = extract_keypoints(box)
            assert np.array_equal(kp.points[0], box.center)

    def test_structure_invariants(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            kp = extract_keypoints(project_to_bev(random_box(rng)))
            assert np.abs(kp.center - kp.corners.mean(axis=0)).max() < 1e-9
            for mid, (a, b) in EDGE_CORNER_ADJACENCY.items():
                expected = 0.5 * (kp.points[a] + kp.points[b])
                assert np.abs(kp.points[mid] - expected).max() < 1e-9

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            box = project_to_bev(random_box(rng))
            phi = rng.uniform(-math.pi, math.pi)
            rotated = BevBox(center=box.center, dims=box.dims, yaw=box.yaw + phi)
            got = extract_keypoints(rotated).points
            c, s = math.cos(phi), math.sin(phi)
            rot = np.array([[c, -s], [s, c]])
            expected = (extract_keypoints(box).points - box.center) @ rot.T + box.center
            assert np.abs(got - expected).max() < 1e-9


def cloud_around_box(rng, box, n=200, spread=1.5):
    canon = rng.uniform(-spread, spread, (n, 3)) * box.dims
    world = box.to_world(canon)
    pts = np.hstack([world, rng.uniform(0, 1, (n, 1))]).astype(np.float32)
    return PointCloud(pts)


class TestVoxelizeBox:
    def test_rejects_zero_grid(self):
        box = Box3D(center=(0, 0, 0), dims=(4, 2, 1), yaw=0.0)
        with pytest.raises(ValueError):
            voxelize_box(box, PointCloud.empty(), (4, 0, 1))

    def test_default_grid_has_eight_voxels(self):
        box = Box3D(center=(0, 0, 0), dims=(4, 2, 1), yaw=0.0)
        grid = voxelize_box(box, PointCloud.empty(), (4, 2, 1))
        assert grid.n_voxels == 8

    def test_center_point_bin(self):
        box = Box3D(center=(0, 0, 0.5), dims=(4, 2, 1), yaw=0.0)
        cloud = PointCloud(np.array([[0, 0, 0.5, 0.5]], dtype=np.float32))
        grid = voxelize_box(box, cloud, (4, 2, 1))
        # center sits on interior bin boundaries; floor sends it upward
        assert grid.voxel_ids.tolist() == [(2 * 2 + 1) * 1 + 0]

    def test_point_past_front_face_outside(self):
        box = Box3D(center=(0, 0, 0), dims=(4, 2, 1), yaw=0.0)
        cloud = PointCloud(np.array([[2.001, 0, 0, 0.5]], dtype=np.float32))
        grid = voxelize_box(box, cloud, (4, 2, 1))
        assert grid.outside_indices.tolist() == [0]
        assert grid.inside_indices.size == 0

    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(0, 2 ** 31 - 1),
        st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3)),
    )
    def test_partition(self, seed, grid_shape):
        rng = np.random.default_rng(seed)
        box = random_box(rng)
        cloud = cloud_around_box(rng, box)
        grid = voxelize_box(box, cloud, grid_shape)
        merged = np.sort(np.concatenate([grid.inside_indices, grid.outside_indices]))
        assert np.array_equal(merged, np.arange(len(cloud)))
        assert grid.voxel_ids.min(initial=0) >= 0
        assert grid.voxel_ids.max(initial=0) < grid.n_voxels

    def test_voxel_centers_strictly_inside(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            box = random_box(rng)
            grid = voxelize_box(box, PointCloud.empty(), (3, 2, 2))
            canon = box.to_canonical(grid.voxel_centers)
            assert (np.abs(canon) < box.dims / 2.0 - 1e-12).all()

    def test_frame_invariance(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            box = random_box(rng, max_offset=20.0)
            cloud = cloud_around_box(rng, box, n=100)
            grid = voxelize_box(box, cloud, (4, 2, 1))

            phi = rng.uniform(-math.pi, math.pi)
            shift = rng.uniform(-10, 10, 3)
            c, s = math.cos(phi), math.sin(phi)
            rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
            moved_box = Box3D(
                center=rot @ box.center + shift, dims=box.dims, yaw=box.yaw + phi
            )
            moved_pts = cloud.points.copy()
            moved_pts[:, :3] = (cloud.xyz.astype(np.float64) @ rot.T + shift).astype(
                np.float32
            )
            moved = voxelize_box(moved_box, PointCloud(moved_pts), (4, 2, 1))
            assert np.array_equal(moved.inside_indices, grid.inside_indices)
            assert np.array_equal(moved.voxel_ids, grid.voxel_ids)
