"""Poses, back-projection, cropping, voxelization, and normal estimation."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from graspgraph.geometry import (
    CameraModel,
    PointCloud,
    RigidPose,
    back_project,
    crop_workspace,
    surface_normals,
    to_grasp_frame,
    voxelize,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def random_pose(r):
    return RigidPose(Rotation.random(random_state=np.random.RandomState(r.integers(2 ** 31))).as_matrix(),
                     r.standard_normal(3) * 0.3)


class TestRigidPose:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError, match="orthonormal"):
            RigidPose(np.eye(3) * 2.0, np.zeros(3))

    def test_rejects_reflection(self):
        m = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="determinant"):
            RigidPose(m, np.zeros(3))

    def test_inverse_round_trip(self):
        pose = random_pose(rng(1))
        p = rng(2).standard_normal((20, 3))
        assert np.allclose(pose.inverse().apply(pose.apply(p)), p, atol=1e-9)

    def test_compose_matches_sequential_apply(self):
        r = rng(3)
        a, b = random_pose(r), random_pose(r)
        p = r.standard_normal((5, 3))
        assert np.allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-9)

    def test_quaternion_round_trip(self):
        pose = random_pose(rng(4))
        q = pose.as_quaternion()
        assert abs(np.linalg.norm(q) - 1.0) < 1e-9
        assert q[0] >= 0
        back = RigidPose.from_quaternion(q, pose.translation)
        assert np.allclose(back.rotation, pose.rotation, atol=1e-9)


class TestBackProject:
    def camera(self, pose=None):
        return CameraModel(fx=100.0, fy=100.0, cx=8.0, cy=6.0, width=16, height=12,
                           pose=pose or RigidPose.identity())

    def test_principal_axis_ray(self):
        cam = self.camera()
        depth = np.zeros((12, 16), np.float32)
        mask = np.zeros((12, 16), np.uint16)
        depth[6, 8] = 1.0
        mask[6, 8] = 3
        cloud = back_project(depth, mask, cam)
        assert np.allclose(cloud.points, [[0.0, 0.0, 1.0]])
        assert cloud.object_ids.tolist() == [3]

    def test_all_invalid_depth_gives_empty_cloud(self):
        cam = self.camera()
        cloud = back_project(np.zeros((12, 16), np.float32),
                             np.ones((12, 16), np.uint16), cam)
        assert len(cloud) == 0

    def test_offset_pixel_pinhole_equation(self):
        # pixel one focal length right of center at depth 2 lands at x = z
        cam = CameraModel(fx=4.0, fy=4.0, cx=8.0, cy=6.0, width=16, height=12)
        depth = np.zeros((12, 16), np.float32)
        mask = np.zeros((12, 16), np.uint16)
        depth[6, 12] = 2.0
        mask[6, 12] = 1
        cloud = back_project(depth, mask, cam)
        assert np.allclose(cloud.points, [[2.0, 0.0, 2.0]])

    def test_camera_pose_is_applied(self):
        pose = RigidPose(np.eye(3), [0.5, 0.0, 0.0])
        cloud = back_project(*self._center_pixel(), self.camera(pose))
        assert np.allclose(cloud.points, [[0.5, 0.0, 1.0]])

    def _center_pixel(self):
        depth = np.zeros((12, 16), np.float32)
        mask = np.zeros((12, 16), np.uint16)
        depth[6, 8] = 1.0
        mask[6, 8] = 1
        return depth, mask

    def test_background_mask_pixels_skipped(self):
        cam = self.camera()
        depth = np.full((12, 16), 1.0, np.float32)
        mask = np.zeros((12, 16), np.uint16)
        mask[0, 0] = 7
        cloud = back_project(depth, mask, cam)
        assert len(cloud) == 1
        assert cloud.object_ids.tolist() == [7]


class TestGraspFrame:
    def test_identity_leaves_cloud(self):
        cloud = PointCloud(rng(5).standard_normal((10, 3)))
        out = to_grasp_frame(cloud, RigidPose.identity())
        assert np.allclose(out.points, cloud.points)

    def test_grasp_point_maps_to_origin(self):
        r = rng(6)
        pose = random_pose(r)
        cloud = PointCloud(pose.translation[None, :])
        out = to_grasp_frame(cloud, pose)
        assert np.allclose(out.points, [[0.0, 0.0, 0.0]], atol=1e-12)

    def test_round_trip_recovers_input(self):
        r = rng(7)
        pose = random_pose(r)
        cloud = PointCloud(r.standard_normal((30, 3)))
        there = to_grasp_frame(cloud, pose)
        back = PointCloud(pose.apply(there.points))
        assert np.allclose(back.points, cloud.points, atol=1e-6)

    def test_isometry(self):
        r = rng(8)
        pose = random_pose(r)
        p = r.standard_normal((15, 3))
        d_before = np.linalg.norm(p[:, None] - p[None, :], axis=-1)
        q = to_grasp_frame(PointCloud(p), pose).points
        d_after = np.linalg.norm(q[:, None] - q[None, :], axis=-1)
        assert np.allclose(d_before, d_after, atol=1e-6)


class TestCropWorkspace:
    def test_inside_kept_outside_dropped(self):
        cloud = PointCloud([[0, 0, 0], [0.15, 0, 0]], [1, 1])
        out = crop_workspace(cloud)
        assert list(out) == [1]
        assert np.allclose(out[1].points, [[0, 0, 0]])

    def test_far_object_excluded(self):
        cloud = PointCloud([[0, 0, 0], [0.19, 0.0, 0.0]], [1, 2])
        out = crop_workspace(cloud)
        assert list(out) == [1]

    def test_boundary_point_kept(self):
        # the cube is closed: exactly on a face still counts
        cloud = PointCloud([[0.1, 0.1, 0.1]], [4])
        assert list(crop_workspace(cloud)) == [4]

    def test_all_dropped_gives_empty_mapping(self):
        cloud = PointCloud([[1.0, 1.0, 1.0]], [1])
        assert crop_workspace(cloud) == {}

    def test_far_point_never_changes_output(self):
        r = rng(9)
        pts = r.uniform(-0.09, 0.09, (20, 3))
        ids = np.ones(20, dtype=int)
        base = crop_workspace(PointCloud(pts, ids))
        extended = crop_workspace(PointCloud(np.vstack([pts, [[0.5, 0.5, 0.5]]]),
                                             np.append(ids, 1)))
        assert np.array_equal(base[1].points, extended[1].points)


class TestVoxelize:
    def test_center_cell(self):
        # voxel size 0.2/32 = 6.25 mm; the cube center indexes to (16,16,16)
        grid = voxelize(PointCloud([[0.0, 0.0, 0.0]]), 0.2, [-0.1, -0.1, -0.1])
        occupied = np.argwhere(grid.occupancy)
        assert occupied.tolist() == [[16, 16, 16]]

    def test_empty_cloud_all_zero(self):
        grid = voxelize(PointCloud.empty(), 0.2, [-0.1, -0.1, -0.1])
        assert not grid.occupancy.any()

    def test_eight_corners_with_max_face_clamp(self):
        corners = np.array([[x, y, z] for x in (-0.1, 0.1)
                            for y in (-0.1, 0.1) for z in (-0.1, 0.1)])
        grid = voxelize(PointCloud(corners), 0.2, [-0.1, -0.1, -0.1])
        occupied = {tuple(c) for c in np.argwhere(grid.occupancy)}
        assert occupied == {(x, y, z) for x in (0, 31) for y in (0, 31) for z in (0, 31)}

    def test_idempotent_under_duplication(self):
        r = rng(10)
        pts = r.uniform(-0.1, 0.1, (50, 3))
        once = voxelize(PointCloud(pts), 0.2, [-0.1, -0.1, -0.1])
        twice = voxelize(PointCloud(np.vstack([pts, pts])), 0.2, [-0.1, -0.1, -0.1])
        assert np.array_equal(once.occupancy, twice.occupancy)

    def test_outside_points_ignored(self):
        grid = voxelize(PointCloud([[0.5, 0.0, 0.0]]), 0.2, [-0.1, -0.1, -0.1])
        assert not grid.occupancy.any()


class TestSurfaceNormals:
    def test_plane_normals(self):
        xs, ys = np.meshgrid(np.linspace(0, 1, 8), np.linspace(0, 1, 8))
        pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(64)], axis=1)
        normals, valid = surface_normals(PointCloud(pts), k=10,
                                         view_point=[0.5, 0.5, 2.0])
        assert valid.all()
        assert np.allclose(normals[:, 2], 1.0, atol=1e-9)

    def test_sphere_normals_near_radial(self):
        # analytic oracle: a sphere's surface normal is the radial direction
        r = rng(11)
        dirs = r.standard_normal((500, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = 0.05 * dirs
        normals, valid = surface_normals(PointCloud(pts), k=10,
                                         view_point=[0.0, 0.0, 1.0])
        assert valid.all()
        cosang = np.abs(np.einsum("ij,ij->i", normals, dirs))
        angles = np.degrees(np.arccos(np.clip(cosang, -1, 1)))
        assert angles.max() < 15.0

    def test_collinear_points_invalid(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], float)
        normals, valid = surface_normals(PointCloud(pts), k=2)
        assert not valid.any()

    def test_too_few_points_raises(self):
        with pytest.raises(ValueError, match="at least"):
            surface_normals(PointCloud(np.zeros((3, 3))), k=10)

    def test_orientation_faces_view_point(self):
        xs, ys = np.meshgrid(np.linspace(0, 1, 6), np.linspace(0, 1, 6))
        pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(36)], axis=1)
        above, _ = surface_normals(PointCloud(pts), k=8, view_point=[0.5, 0.5, 1.0])
        below, _ = surface_normals(PointCloud(pts), k=8, view_point=[0.5, 0.5, -1.0])
        assert np.allclose(above[:, 2], 1.0)
        assert np.allclose(below[:, 2], -1.0)
