"""Scene generation, rendering, ground-truth voxels, and the grasp oracle."""

import numpy as np
import pytest
from scipy.ndimage import binary_dilation

from graspgraph import sim
from graspgraph.geometry import GRID_RESOLUTION, RigidPose, back_project, voxelize
from graspgraph.sim import (
    GripperModel,
    OracleResult,
    Scene,
    complete_voxel_ground_truth,
    generate_scene,
    match_targets,
    oracle_evaluate,
    render_depth,
)
from graspgraph.sim.scene import (
    PrimitiveObject,
    _transform_footprint,
    _yaw_pose,
    default_camera,
    load_scene,
    polygon_gap,
    save_scene,
    scene_from_dict,
    scene_to_dict,
)

R_DOWN = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])  # approach -z, close +-x


def lone_scene(obj):
    return Scene([obj], default_camera(), 0.5)


def box_obj(w, d, h, x=0.0, y=0.0, yaw=0.0, shape_id=0):
    return PrimitiveObject("box", {"width": w, "depth": d, "height": h},
                           _yaw_pose(x, y, yaw), shape_id)


class TestGenerateScene:
    def test_single_object_rests_on_table(self):
        scene = generate_scene(0, 1)
        assert len(scene.objects) == 1
        assert scene.objects[0].pose.translation[2] == 0.0

    def test_determinism(self):
        a = scene_to_dict(generate_scene(42, 14, 2))
        b = scene_to_dict(generate_scene(42, 14, 2))
        assert a == b

    def test_different_seeds_differ(self):
        a = scene_to_dict(generate_scene(1, 7))
        b = scene_to_dict(generate_scene(2, 7))
        assert a != b

    def test_identical_sets_share_shape(self):
        scene = generate_scene(5, 21, 3)
        by_id = {}
        for obj in scene.objects:
            by_id.setdefault(obj.shape_id, []).append(obj)
        assert len(by_id) == 7
        for copies in by_id.values():
            assert len(copies) == 3
            assert all(c.shape_kind == copies[0].shape_kind for c in copies)
            assert all(c.dimensions == copies[0].dimensions for c in copies)

    def test_objects_stay_on_table_without_overlap(self):
        scene = generate_scene(7, 14, 2)
        half = scene.table_extent / 2
        feet = []
        for o in scene.objects:
            yaw = np.arctan2(o.pose.rotation[1, 0], o.pose.rotation[0, 0])
            x, y = o.pose.translation[:2]
            feet.append([_transform_footprint(p, x, y, yaw)
                         for p in o.shape.footprints()])
        for f in feet:
            for poly in f:
                assert np.abs(poly).max() <= half + 1e-9
        for i in range(len(feet)):
            for j in range(i + 1, len(feet)):
                worst = min(polygon_gap(a, b) for a in feet[i] for b in feet[j])
                assert worst > -1e-3   # interpenetration beyond 1 mm forbidden

    def test_dense_scene_mean_nearest_neighbor_gap(self):
        # dense clutter: objects nearly touching on average (measured oracle)
        gaps = []
        for seed in range(5):
            scene = generate_scene(seed, 35, 5)
            feet = []
            for o in scene.objects:
                yaw = np.arctan2(o.pose.rotation[1, 0], o.pose.rotation[0, 0])
                x, y = o.pose.translation[:2]
                feet.append([_transform_footprint(p, x, y, yaw)
                             for p in o.shape.footprints()])
            for i in range(len(feet)):
                gaps.append(min(max(polygon_gap(a, b), 0.0)
                                for j in range(len(feet)) if j != i
                                for a in feet[i] for b in feet[j]))
        assert np.mean(gaps) < 0.03

    def test_indivisible_count_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            generate_scene(0, 10, 3)


class TestRenderDepth:
    def test_empty_scene_all_zero(self):
        depth, mask = render_depth(Scene([], default_camera(), 0.5))
        assert not depth.any()
        assert not mask.any()

    def test_sphere_depth_closed_form(self):
        # a ray through the sphere center exits the closed form d - r
        radius = 0.03
        sphere = PrimitiveObject("sphere", {"radius": radius},
                                 _yaw_pose(0.0, 0.0, 0.0), 0)
        scene = lone_scene(sphere)
        center_world = np.array([0.0, 0.0, radius])
        cam = scene.camera
        center_cam = cam.pose.inverse().apply(center_world)
        u = cam.fx * center_cam[0] / center_cam[2] + cam.cx
        v = cam.fy * center_cam[1] / center_cam[2] + cam.cy
        depth, mask = render_depth(scene)
        got = depth[int(round(v)), int(round(u))]
        # the hit depth is the z-component of (center - r * ray_dir)
        ray = np.array([(round(u) - cam.cx) / cam.fx, (round(v) - cam.cy) / cam.fy, 1.0])
        expect = center_cam[2] - radius * (1.0 / np.linalg.norm(ray))
        assert got > 0
        assert abs(got - expect) < 1e-4

    def test_occlusion_shrinks_rear_mask(self):
        rear = box_obj(0.05, 0.05, 0.05, x=0.0, shape_id=0)
        # tall slab between the camera and the rear box blocks its center column
        front = box_obj(0.05, 0.02, 0.30, x=0.085, shape_id=1)
        alone = render_depth(lone_scene(rear))[1]
        _, both = render_depth(Scene([rear, front], default_camera(), 0.5))
        assert (both == 1).sum() < (alone == 1).sum()
        assert (both == 1).sum() > 0

    def test_masks_partition_pixels(self):
        scene = generate_scene(3, 14, 2)
        depth, mask = render_depth(scene)
        assert ((depth > 0) == (mask > 0)).all()

    def test_depth_pixels_lie_on_surfaces(self):
        scene = generate_scene(11, 7)
        depth, mask = render_depth(scene)
        cloud = back_project(depth, mask, scene.camera)
        for i, obj in enumerate(scene.objects):
            pts = cloud.points[cloud.object_ids == i + 1]
            if len(pts):
                assert obj.contains_world(pts, tol=2e-3).all()


class TestMatchTargets:
    def test_three_identical(self):
        scene = generate_scene(0, 21, 3)
        matches = match_targets(scene, 4)
        assert len(matches) == 3
        assert all(scene.objects[i].shape_id == 4 for i in matches)

    def test_unique_object(self):
        scene = generate_scene(0, 7, 1)
        assert len(match_targets(scene, 2)) == 1

    def test_absent_id_empty(self):
        scene = generate_scene(0, 7, 1)
        assert match_targets(scene, 99) == []


class TestCompleteVoxelGroundTruth:
    def test_sphere_volume_fraction(self):
        radius = 0.03
        sphere = PrimitiveObject("sphere", {"radius": radius},
                                 _yaw_pose(0.0, 0.0, 0.0), 0)
        scene = lone_scene(sphere)
        grid = complete_voxel_ground_truth(scene, 0, 0.2, [-0.1, -0.1, radius - 0.1])
        count = int(grid.occupancy.sum())
        voxel = 0.2 / GRID_RESOLUTION
        expect = (4.0 / 3.0) * np.pi * radius ** 3 / voxel ** 3
        assert abs(count - expect) / expect < 0.15

    def test_empty_region_zero(self):
        scene = lone_scene(box_obj(0.04, 0.04, 0.04))
        grid = complete_voxel_ground_truth(scene, 0, 0.2, [1.0, 1.0, 1.0])
        assert not grid.occupancy.any()

    @pytest.mark.parametrize("kind,dims", [
        ("box", {"width": 0.05, "depth": 0.04, "height": 0.045}),
        ("sphere", {"radius": 0.025}),
        ("cylinder", {"radius": 0.02, "height": 0.05}),
    ])
    def test_visible_surface_within_dilated_truth(self, kind, dims):
        # every cell touched by rendered surface points borders a truth cell
        obj = PrimitiveObject(kind, dims, _yaw_pose(0.0, 0.0, 0.0), 0)
        scene = lone_scene(obj)
        depth, mask = render_depth(scene)
        cloud = back_project(depth, mask, scene.camera)
        origin = np.array([-0.1, -0.1, -0.05])
        visible = voxelize(cloud, 0.2, origin).occupancy
        truth = complete_voxel_ground_truth(scene, 0, 0.2, origin).occupancy
        dilated = binary_dilation(truth, np.ones((3, 3, 3), dtype=bool))
        assert visible.sum() > 0
        assert not (visible & ~dilated).any()

    def test_grid_in_rotated_frame(self):
        obj = box_obj(0.04, 0.04, 0.04)
        scene = lone_scene(obj)
        frame = RigidPose(R_DOWN, [0.0, 0.0, 0.02])
        grid = complete_voxel_ground_truth(scene, 0, 0.2, [-0.1, -0.1, -0.1],
                                           frame=frame)
        world_grid = complete_voxel_ground_truth(scene, 0, 0.2, [-0.1, -0.1, -0.08])
        assert grid.occupancy.sum() == world_grid.occupancy.sum()


class TestOracle:
    def test_lone_box_top_down_success(self):
        scene = lone_scene(box_obj(0.04, 0.04, 0.05, x=0.05, y=0.02))
        grasp = RigidPose(R_DOWN, [0.05, 0.02, 0.052])
        result = oracle_evaluate(scene, grasp, 0)
        assert result.success == 1
        assert result.failure_reason == "none"

    def test_far_grasp_no_contact(self):
        scene = lone_scene(box_obj(0.04, 0.04, 0.05))
        result = oracle_evaluate(scene, RigidPose(R_DOWN, [1.0, 1.0, 1.0]), 0)
        assert result.failure_reason == "no_contact"

    def test_sphere_centered_closing_line(self):
        sphere = PrimitiveObject("sphere", {"radius": 0.025},
                                 _yaw_pose(0.0, 0.0, 0.0), 0)
        rot = np.array([[0.0, 0, 1], [1.0, 0, 0], [0, 1.0, 0]])  # approach +x
        result = oracle_evaluate(lone_scene(sphere),
                                 RigidPose(rot, [-0.03, 0.0, 0.025]), 0)
        assert result.success == 1

    def test_table_collision_fatal(self):
        scene = lone_scene(box_obj(0.04, 0.04, 0.05))
        result = oracle_evaluate(scene, RigidPose(R_DOWN, [0.0, 0.0, 0.03]), 0)
        assert result.failure_reason == "collision_fatal"

    def test_too_wide_fails_force_closure(self):
        # sphere diameter 0.09 exceeds the 0.08 finger span
        sphere = PrimitiveObject("sphere", {"radius": 0.045},
                                 _yaw_pose(0.0, 0.0, 0.0), 0)
        result = oracle_evaluate(lone_scene(sphere),
                                 RigidPose(R_DOWN, [0.0, 0.0, 0.095]), 0)
        assert result.failure_reason == "force_closure_fail"

    def test_deep_nontarget_intrusion_fatal(self):
        target = box_obj(0.04, 0.04, 0.05, shape_id=0)
        blocker = box_obj(0.04, 0.04, 0.06, x=0.055, shape_id=1)  # inside finger path
        scene = Scene([target, blocker], default_camera(), 0.5)
        result = oracle_evaluate(scene, RigidPose(R_DOWN, [0.0, 0.0, 0.052]), 0)
        assert result.failure_reason == "collision_fatal"

    def test_shallow_nontarget_intrusion_minor(self):
        target = box_obj(0.04, 0.04, 0.05, shape_id=0)
        # neighbor overlaps the right finger by 5 mm, under the fatal threshold
        neighbor = box_obj(0.04, 0.04, 0.05, x=0.070, shape_id=1)
        scene = Scene([target, neighbor], default_camera(), 0.5)
        result = oracle_evaluate(scene, RigidPose(R_DOWN, [0.0, 0.0, 0.052]), 0)
        assert result.success == 1
        assert result.swept_minor_collisions == 1

    def test_target_index_out_of_range(self):
        scene = lone_scene(box_obj(0.04, 0.04, 0.05))
        with pytest.raises(IndexError, match="out of range"):
            oracle_evaluate(scene, RigidPose(R_DOWN, [0.0, 0.0, 0.05]), 1)

    def test_object_order_invariance(self):
        a = box_obj(0.04, 0.04, 0.05, x=0.0, shape_id=0)
        b = box_obj(0.03, 0.03, 0.04, x=0.09, shape_id=1)
        grasp = RigidPose(R_DOWN, [0.0, 0.0, 0.052])
        r1 = oracle_evaluate(Scene([a, b], default_camera(), 0.5), grasp, 0)
        r2 = oracle_evaluate(Scene([b, a], default_camera(), 0.5), grasp, 1)
        assert (r1.success, r1.failure_reason, r1.swept_minor_collisions) == \
               (r2.success, r2.failure_reason, r2.swept_minor_collisions)

    def test_frame_invariance_under_translation_and_yaw(self):
        obj = box_obj(0.04, 0.04, 0.05, x=0.02, y=-0.03, yaw=0.4)
        grasp = RigidPose(R_DOWN, [0.02, -0.03, 0.052])
        base = oracle_evaluate(lone_scene(obj), grasp, 0)
        shift = _yaw_pose(0.06, 0.05, 1.1)
        moved_obj = PrimitiveObject(obj.shape_kind, obj.dimensions,
                                    shift.compose(obj.pose), obj.shape_id)
        moved_grasp = shift.compose(grasp)
        moved = oracle_evaluate(lone_scene(moved_obj), moved_grasp, 0)
        assert base.success == 1
        assert moved.success == base.success
        assert moved.failure_reason == base.failure_reason

    def test_result_invariant_validation(self):
        with pytest.raises(ValueError, match="reason"):
            OracleResult(1, "no_contact")
        with pytest.raises(ValueError, match="unknown"):
            OracleResult(0, "bogus")

    def test_gripper_validation(self):
        with pytest.raises(ValueError, match="positive"):
            GripperModel(finger_span=-0.1)


class TestSceneSerialization:
    def test_round_trip(self):
        scene = generate_scene(13, 14, 2)
        restored = scene_from_dict(scene_to_dict(scene))
        assert len(restored.objects) == len(scene.objects)
        for a, b in zip(scene.objects, restored.objects):
            assert a.shape_kind == b.shape_kind
            assert a.dimensions == pytest.approx(b.dimensions)
            assert np.allclose(a.pose.rotation, b.pose.rotation, atol=1e-9)
            assert np.allclose(a.pose.translation, b.pose.translation, atol=1e-12)
        assert restored.seed == 13

    def test_save_is_byte_deterministic(self, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_scene(p1, generate_scene(17, 7))
        save_scene(p2, generate_scene(17, 7))
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_scene_renders_identically(self, tmp_path):
        scene = generate_scene(17, 7)
        path = tmp_path / "scene.json"
        save_scene(path, scene)
        depth_a, mask_a = render_depth(scene)
        depth_b, mask_b = render_depth(load_scene(path))
        assert np.abs(depth_a - depth_b).max() < 1e-6
        assert (mask_a == mask_b).all()
