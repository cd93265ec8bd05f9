"""Scene assembly: pose projection, collision culling, and rendered targets."""

import numpy as np
import pytest

from graspkit.annotate import annotate_object
from graspkit.config import PipelineConfig, apply_overrides
from graspkit.errors import InvariantViolation
from graspkit.geometry import (
    GripperModel,
    PointCloud,
    RigidTransform,
    rotation_from_view_angle,
)
from graspkit.scene import (
    SceneCandidates,
    SceneGroundTruth,
    ScenePose,
    compute_graspness,
    cull_collisions,
    gripper_body_counts,
    make_table_cloud,
    parse_scene_description,
    project_annotations,
    render_supervision,
    synthesize_depth,
    unproject_depth,
    write_scene_description,
)

from conftest import (
    OVERHEAD_INTRINSICS,
    build_scene,
    make_box_object,
    overhead_camera,
    rot_z,
)


@pytest.fixture(scope="module")
def coarse_annotation():
    obj = make_box_object(spacing=0.004)
    cfg = apply_overrides(PipelineConfig(), views=4, grasp_voxel=0.02)
    return obj, annotate_object(obj, cfg)


def body_membership_oracle(points, p, v, angle, depth, width, gripper):
    """Count points inside fingers or base, one point at a time."""
    rot = rotation_from_view_angle(v, angle)
    closing, vertical = rot[:, 1], rot[:, 2]
    ft = gripper.finger_thickness
    count = 0
    for q in points:
        rel = q - p
        a = float(rel @ v) + depth
        s = float(rel @ closing)
        h = float(rel @ vertical)
        if abs(h) > ft / 2.0:
            continue
        in_finger = (width / 2.0 < abs(s) <= width / 2.0 + ft
                     and 0.0 <= a <= gripper.finger_length)
        in_base = (abs(s) <= width / 2.0 + ft
                   and -gripper.base_depth <= a < 0.0)
        if in_finger or in_base:
            count += 1
    return count


class TestScenePose:
    def test_rejects_improper_rotation(self):
        with pytest.raises(ValueError):
            ScenePose("x", np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_transform_round_trip(self):
        pose = ScenePose("x", rot_z(0.3), np.array([0.1, 0.0, 0.05]))
        t = pose.transform()
        assert isinstance(t, RigidTransform)
        pt = np.array([[0.01, 0.02, 0.03]])
        assert np.allclose(t.inverse().apply(t.apply(pt)), pt, atol=1e-12)


class TestProjection:
    def test_identity_pose_is_a_no_op(self, coarse_annotation):
        obj, ann = coarse_annotation
        pose = ScenePose(obj.id, np.eye(3), np.zeros(3))
        sc = project_annotations([(obj, pose)], {obj.id: ann})[0]
        assert np.array_equal(sc.grasp_points, ann.grasp_points)
        assert np.array_equal(sc.views, ann.view_sphere.views)
        # Offsets are 0 modulo 2 pi; cross-product drift may wrap them.
        wrapped = np.minimum(sc.theta_offset, 2.0 * np.pi - sc.theta_offset)
        assert np.all(np.abs(wrapped) < 1e-12)
        assert np.array_equal(sc.scores, ann.scores)
        assert np.array_equal(sc.widths, ann.widths)
        assert not sc.collided.any()

    def test_rotated_pose_preserves_grasp_frames(self, coarse_annotation):
        # The world candidate frame must be the posed object-frame candidate:
        # column-for-column within numerical tolerance.
        obj, ann = coarse_annotation
        rng = np.random.default_rng(7)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        pose = ScenePose(obj.id, q, np.array([0.05, -0.02, 0.1]))
        sc = project_annotations([(obj, pose)], {obj.id: ann})[0]

        assert np.allclose(sc.grasp_points,
                           ann.grasp_points @ q.T + pose.translation, atol=1e-12)
        world = sc.world_angles()
        grid = ann.gripper.angle_grid()
        for j in range(sc.views.shape[0]):
            for a in range(0, len(grid), 5):
                frame_obj = q @ rotation_from_view_angle(
                    ann.view_sphere.views[j], grid[a])
                frame_world = rotation_from_view_angle(sc.views[j], world[j, a])
                assert np.allclose(frame_world, frame_obj, atol=1e-9)

    def test_scores_carry_over_bitwise(self, coarse_annotation):
        obj, ann = coarse_annotation
        pose = ScenePose(obj.id, rot_z(1.1), np.array([0.0, 0.1, 0.0]))
        sc = project_annotations([(obj, pose)], {obj.id: ann})[0]
        assert np.array_equal(sc.scores, ann.scores)
        assert np.array_equal(sc.widths, ann.widths)

    def test_unknown_object_id_raises(self, coarse_annotation):
        obj, ann = coarse_annotation
        pose = ScenePose("mystery", np.eye(3), np.zeros(3))
        from graspkit.annotate import ObjectModel

        other = ObjectModel("mystery", obj.surface)
        with pytest.raises(ValueError):
            project_annotations([(other, pose)], {obj.id: ann})


class TestBodyCounts:
    def test_matches_per_point_oracle(self):
        rng = np.random.default_rng(3)
        gripper = GripperModel()
        pts = rng.uniform(-0.08, 0.08, size=(300, 3))
        p = rng.uniform(-0.01, 0.01, size=3)
        v = rng.standard_normal(3)
        v /= np.linalg.norm(v)
        angles = rng.uniform(0.0, 2.0 * np.pi, size=5)
        depths = np.array(gripper.depth_grid)
        widths = rng.uniform(0.01, 0.08, size=(5, 4))

        got = gripper_body_counts(pts, p, v, angles, depths, widths, gripper)
        for ai, angle in enumerate(angles):
            for di, depth in enumerate(depths):
                expect = body_membership_oracle(
                    pts, p, v, float(angle), float(depth),
                    float(widths[ai, di]), gripper)
                assert got[ai, di] == expect

    def test_closing_region_is_not_a_collision(self):
        # A point squarely between the jaws must not count as body contact.
        gripper = GripperModel()
        pts = np.array([[0.0, 0.0, 0.0]])
        counts = gripper_body_counts(
            pts, np.zeros(3), np.array([0.0, 0.0, -1.0]),
            np.array([0.0]), np.array([0.02]), np.array([[0.04]]), gripper)
        assert counts[0, 0] == 0

    def test_finger_and_base_points_do_collide(self):
        gripper = GripperModel()
        finger_pt = np.array([[0.025, 0.0, 0.0]])      # just outside a 0.04 jaw
        base_pt = np.array([[0.0, 0.0, 0.03]])         # behind the origin
        for pts in (finger_pt, base_pt):
            counts = gripper_body_counts(
                pts, np.zeros(3), np.array([0.0, 0.0, -1.0]),
                np.array([0.0]), np.array([0.02]), np.array([[0.04]]), gripper)
            assert counts[0, 0] == 1


class TestCull:
    def test_flags_match_oracle_and_scores_zeroed(self, coarse_annotation):
        obj, ann = coarse_annotation
        pose = ScenePose(obj.id, np.eye(3), np.array([0.0, 0.0, 0.015]))
        sc = project_annotations([(obj, pose)], {obj.id: ann})[0]
        table = make_table_cloud(0.2, 0.2, 0.01, z=0.0)
        cloud_pts = np.concatenate([
            obj.surface.transformed(pose.rotation, pose.translation).points,
            table.points,
        ])
        culled = cull_collisions(sc, PointCloud(cloud_pts))

        grid = ann.gripper.angle_grid()
        depths = np.array(ann.gripper.depth_grid)
        rng = np.random.default_rng(0)
        p_count, v_count = sc.scores.shape[:2]
        for _ in range(60):
            i = int(rng.integers(p_count))
            j = int(rng.integers(v_count))
            a = int(rng.integers(len(grid)))
            d = int(rng.integers(len(depths)))
            angle = float(culled.world_angles()[j, a])
            n_hit = body_membership_oracle(
                cloud_pts, sc.grasp_points[i], sc.views[j], angle,
                float(depths[d]), float(sc.widths[i, j, a, d]), ann.gripper)
            assert culled.collided[i, j, a, d] == (n_hit > 0)
            if n_hit > 0:
                assert culled.scores[i, j, a, d] == 0.0
            else:
                assert culled.scores[i, j, a, d] == sc.scores[i, j, a, d]

    def test_cull_never_revives_candidates(self, coarse_annotation):
        obj, ann = coarse_annotation
        pose = ScenePose(obj.id, np.eye(3), np.array([0.0, 0.0, 0.015]))
        sc = project_annotations([(obj, pose)], {obj.id: ann})[0]
        table = make_table_cloud(0.2, 0.2, 0.01, z=0.0)
        cloud = PointCloud(np.concatenate([
            obj.surface.transformed(pose.rotation, pose.translation).points,
            table.points,
        ]))
        culled = cull_collisions(sc, cloud)
        pos_before = sc.scores > 0
        pos_after = culled.scores > 0
        assert np.all(pos_before | ~pos_after)
        # Flags are sticky across repeated culling.
        again = cull_collisions(culled, cloud)
        assert np.array_equal(again.collided, culled.collided)
        assert np.array_equal(again.scores, culled.scores)

    def test_empty_cloud_rejected(self, coarse_annotation):
        obj, ann = coarse_annotation
        pose = ScenePose(obj.id, np.eye(3), np.zeros(3))
        sc = project_annotations([(obj, pose)], {obj.id: ann})[0]
        with pytest.raises(ValueError):
            cull_collisions(sc, PointCloud(np.zeros((0, 3))))


class TestGraspness:
    def test_matches_loop_oracle(self, coarse_annotation):
        obj, ann = coarse_annotation
        pose = ScenePose(obj.id, np.eye(3), np.zeros(3))
        sc = project_annotations([(obj, pose)], {obj.id: ann})[0]
        g, vg = compute_graspness(sc)
        p, v, a, d = sc.scores.shape
        for i in range(p):
            expect_pt = sum(
                1 for j in range(v) for x in range(a) for y in range(d)
                if sc.scores[i, j, x, y] > 0) / (v * a * d)
            assert abs(g[i] - expect_pt) < 1e-15
            for j in range(0, v, 2):
                expect_view = sum(
                    1 for x in range(a) for y in range(d)
                    if sc.scores[i, j, x, y] > 0) / (a * d)
                assert abs(vg[i, j] - expect_view) < 1e-15


class TestSceneContainers:
    def test_candidate_validation(self, coarse_annotation):
        obj, ann = coarse_annotation
        pose = ScenePose(obj.id, np.eye(3), np.zeros(3))
        sc = project_annotations([(obj, pose)], {obj.id: ann})[0]
        bad_collided = sc.collided.copy()
        pos = np.argwhere(sc.scores > 0)
        bad_collided[tuple(pos[0])] = True
        with pytest.raises(InvariantViolation):
            SceneCandidates(sc.object_id, sc.grasp_points, sc.views,
                            sc.theta_offset, sc.scores, sc.widths,
                            bad_collided, sc.gripper, sc.pose)

    def test_world_angles_wrap(self, coarse_annotation):
        obj, ann = coarse_annotation
        pose = ScenePose(obj.id, rot_z(2.5), np.zeros(3))
        sc = project_annotations([(obj, pose)], {obj.id: ann})[0]
        w = sc.world_angles()
        assert w.shape == (sc.views.shape[0], ann.gripper.angle_count)
        assert w.min() >= 0.0 and w.max() < 2.0 * np.pi
        expect = np.mod(sc.theta_offset[:, None] + ann.gripper.angle_grid()[None, :],
                        2.0 * np.pi)
        assert np.array_equal(w, expect)

    def test_ground_truth_checks_annotation_order(self, coarse_annotation):
        obj, ann = coarse_annotation
        pose = ScenePose(obj.id, np.eye(3), np.zeros(3))
        sc = project_annotations([(obj, pose)], {obj.id: ann})[0]
        sc.object_id = "other"
        with pytest.raises(InvariantViolation):
            SceneGroundTruth("s", [(obj, pose)], [sc],
                             OVERHEAD_INTRINSICS, overhead_camera(), None)

    def test_scene_cloud_merges_table(self, coarse_annotation):
        obj, ann = coarse_annotation
        scene = build_scene("merge", [(np.eye(3), [0.0, 0.0, 0.015])],
                            obj, ann, table_spacing=0.01)
        n_obj = len(obj.surface)
        n_table = len(scene.table)
        assert len(scene.scene_cloud()) == n_obj + n_table


class TestDepthSynthesis:
    def test_flat_table_depth_equals_camera_height(self, coarse_annotation):
        obj, ann = coarse_annotation
        scene = build_scene("flat", [(np.eye(3), [0.0, 0.0, 0.015])],
                            obj, ann, table_spacing=0.004)
        depth = synthesize_depth(scene)
        vals = depth.values
        assert vals.shape == (96, 128)
        # Away from the box, pixels see the table plane at exactly 600 mm.
        assert vals[20, 40] == np.float32(600.0)
        # The image center sees the box top, 30 mm nearer.
        assert vals[48, 64] == np.float32(570.0)
        valid = vals[vals > 0]
        assert np.mean(valid == np.float32(600.0)) > 0.9

    def test_z_buffer_keeps_the_nearest_point(self):
        intr = OVERHEAD_INTRINSICS
        cam = overhead_camera(0.6)
        pts = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.1]])
        from graspkit.annotate import ObjectModel

        nrm = np.tile([0.0, 0.0, 1.0], (2, 1))
        obj = ObjectModel("pair", PointCloud(pts, nrm))
        scene = SceneGroundTruth("z", [], [], intr, cam,
                                 PointCloud(pts, nrm))
        depth = synthesize_depth(scene)
        assert depth.values[48, 64] == np.float32(500.0)

    def test_unproject_inverts_the_projection(self, coarse_annotation):
        obj, ann = coarse_annotation
        scene = build_scene("inv", [(np.eye(3), [0.0, 0.0, 0.015])],
                            obj, ann, table_spacing=0.004)
        depth = synthesize_depth(scene)
        world, (rows, cols) = unproject_depth(depth, scene.camera_pose)
        assert world.shape[0] == int((depth.values > 0).sum())
        # Every unprojected point reprojects into its own pixel.
        cam = scene.camera_pose.inverse().apply(world)
        u = np.floor(OVERHEAD_INTRINSICS.fx * cam[:, 0] / cam[:, 2]
                     + OVERHEAD_INTRINSICS.cx + 0.5).astype(int)
        v = np.floor(OVERHEAD_INTRINSICS.fy * cam[:, 1] / cam[:, 2]
                     + OVERHEAD_INTRINSICS.cy + 0.5).astype(int)
        assert np.array_equal(u, cols)
        assert np.array_equal(v, rows)
        # Table pixels land back on the z=0 plane.
        table_px = depth.values[rows, cols] == np.float32(600.0)
        assert np.allclose(world[table_px, 2], 0.0, atol=1e-9)


class TestSupervision:
    def test_mask_and_heatmap_consistency(self, scene_v60):
        scene, depth = scene_v60
        targets = render_supervision(scene, depth)
        mask = targets.object_mask
        heat = targets.graspness_heatmap
        assert mask.any()
        assert np.all(heat[~mask] == 0.0)
        assert heat.max() <= 1.0 and heat.min() >= 0.0
        assert heat[mask].max() > 0.0
        assert set(targets.view_graspness) == {"box"}
        # Mask pixels cluster around the box footprint at image center.
        rows, cols = np.nonzero(mask)
        assert abs(rows.mean() - 48.0) < 3.0 and abs(cols.mean() - 64.0) < 3.0

    def test_rejects_mismatched_intrinsics(self, scene_v60):
        scene, depth = scene_v60
        from graspkit.depth_repair import DepthMap
        from graspkit.geometry import CameraIntrinsics

        other = CameraIntrinsics(fx=100.0, fy=100.0, cx=32.0, cy=24.0,
                                 width=64, height=48)
        small = DepthMap(np.zeros((48, 64), dtype=np.float32), other)
        with pytest.raises(ValueError):
            render_supervision(scene, small)


class TestTableAndDescriptions:
    def test_table_cloud_layout(self):
        table = make_table_cloud(0.1, 0.2, 0.05, z=0.01)
        assert np.allclose(table.normals, [0.0, 0.0, 1.0])
        assert np.all(table.points[:, 2] == 0.01)
        assert table.points[:, 0].min() >= -0.05 - 1e-12
        assert table.points[:, 0].max() <= 0.05 + 1e-12
        with pytest.raises(ValueError):
            make_table_cloud(0.0, 0.1, 0.05)

    def test_description_round_trip(self, tmp_path):
        desc = {
            "scene_id": "s1",
            "objects": [{
                "object_id": "box", "surface": "box.ply",
                "annotation": "box.gann",
                "rotation": list(np.eye(3).ravel()),
                "translation": [0.0, 0.0, 0.015],
            }],
            "camera": {
                "intrinsics": {"fx": 120.0, "fy": 120.0, "cx": 64.0,
                               "cy": 48.0, "width": 128, "height": 96},
                "extrinsics": {"rotation": list(overhead_camera().rotation.ravel()),
                               "translation": [0.0, 0.0, 0.6]},
            },
            "table": {"size": [0.3, 0.3], "spacing": 0.004, "z": 0.0},
        }
        path = tmp_path / "scene.json"
        write_scene_description(path, desc)
        assert parse_scene_description(path) == desc

    def test_description_requires_core_keys(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"scene_id": "x", "objects": []}')
        with pytest.raises(ValueError):
            parse_scene_description(path)
