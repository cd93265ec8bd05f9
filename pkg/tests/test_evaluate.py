"""Evaluation-path tests: ranking, judging, AP, proposals, and reports."""

import json

import numpy as np
import pytest

from graspkit.annotate import DEFAULT_MU_GRID
from graspkit.enhance import init_bank, random_attention_weights
from graspkit.errors import InvariantViolation
from graspkit.evaluate import (
    APReport,
    PredictionSet,
    aggregate_reports,
    ap_from_judgments,
    average_precision,
    collides_with_scene,
    graspness_for_cloud,
    ground_truth_predictions,
    judge_grasp,
    load_predictions,
    make_report,
    propose_grasps,
    report_to_dict,
    save_predictions,
    save_report_csv,
    save_report_json,
)
from graspkit.geometry import GraspPose, GripperModel, PointCloud
from graspkit.scene import SceneGroundTruth

from conftest import OVERHEAD_INTRINSICS, make_box_cloud, overhead_camera

DOWN = np.array([0.0, 0.0, -1.0])


def oracle_ap(judgments, top_k=50):
    padded = list(judgments)[:top_k]
    padded += [False] * (top_k - len(padded))
    precisions = []
    hits = 0
    for k, ok in enumerate(padded, start=1):
        hits += 1 if ok else 0
        precisions.append(hits / k)
    return sum(precisions) / top_k


def table_smasher(x=0.05, y=0.05):
    """A grasp whose fingers sweep through the table plane away from the box."""
    return GraspPose([x, y, 0.0], DOWN, 0.0, 0.04, 0.04)


class TestApFromJudgments:
    def test_hand_case(self):
        j = [True, False, True, True, False]
        assert ap_from_judgments(j) == pytest.approx(oracle_ap(j), abs=1e-15)

    def test_hand_case_short_top_k(self):
        j = [True, False, True, True, False]
        expected = (1.0 + 0.5 + 2.0 / 3.0 + 0.75 + 0.6) / 5.0
        assert ap_from_judgments(j, top_k=5) == pytest.approx(expected, abs=1e-15)

    def test_full_success_is_exactly_one(self):
        assert ap_from_judgments([True] * 50) == 1.0

    def test_empty_is_exactly_zero(self):
        assert ap_from_judgments([]) == 0.0
        assert ap_from_judgments([False] * 10) == 0.0

    def test_long_lists_truncate(self):
        assert ap_from_judgments([True] * 80) == 1.0

    def test_padding_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            j = rng.random(int(rng.integers(1, 70))) < 0.5
            assert ap_from_judgments(j) == pytest.approx(oracle_ap(j), abs=1e-12)


class TestPredictionSet:
    def grasp(self, x):
        return GraspPose([x, 0.0, 0.0], DOWN, 0.0, 0.02, 0.04)

    def test_sorts_descending_with_stable_ties(self):
        grasps = [self.grasp(i) for i in range(4)]
        ps = PredictionSet("s", grasps, [0.5, 0.9, 0.5, 0.7])
        assert np.array_equal(ps.confidences, [0.9, 0.7, 0.5, 0.5])
        xs = [g.point[0] for g in ps.grasps]
        assert xs == [1.0, 3.0, 0.0, 2.0]
        assert len(ps) == 4

    def test_rejects_count_mismatch(self):
        with pytest.raises(ValueError):
            PredictionSet("s", [self.grasp(0)], [0.5, 0.6])

    def test_rejects_non_finite_confidence(self):
        with pytest.raises(InvariantViolation):
            PredictionSet("s", [self.grasp(0)], [np.nan])


class TestJudgeGrasp:
    def test_ground_truth_grasps_judge_true(self, scene_v60):
        scene, _ = scene_v60
        preds = ground_truth_predictions(scene, 0.8, top_k=5)
        assert len(preds) == 5
        for g in preds.grasps:
            assert judge_grasp(g, scene, 0.8)

    def test_collision_judges_false(self, scene_v60):
        scene, _ = scene_v60
        g = table_smasher()
        assert collides_with_scene(g, scene, GripperModel())
        assert not judge_grasp(g, scene, 0.8)

    def test_empty_scene_judges_false(self):
        scene = SceneGroundTruth("empty", [], [], OVERHEAD_INTRINSICS,
                                 overhead_camera(), None)
        assert not judge_grasp(table_smasher(), scene, 0.8)

    def test_rejects_non_positive_mu(self, scene_v60):
        scene, _ = scene_v60
        with pytest.raises(ValueError):
            judge_grasp(table_smasher(), scene, 0.0)


class TestAveragePrecision:
    def test_ground_truth_predictions_reach_ap_one(self, scene_v60):
        scene, _ = scene_v60
        for mu in (0.4, 1.0):
            preds = ground_truth_predictions(scene, mu)
            report = average_precision(preds, scene)
            assert report.ap_per_mu[mu] == 1.0

    def test_all_colliding_predictions_score_zero(self, scene_v60):
        scene, _ = scene_v60
        grasps = [table_smasher(0.05 + 0.01 * i) for i in range(3)]
        preds = PredictionSet(scene.scene_id, grasps, [0.9, 0.8, 0.7])
        report = average_precision(preds, scene)
        assert report.ap == 0.0
        assert all(v == 0.0 for v in report.ap_per_mu.values())

    def test_reports_cover_the_friction_grid(self, scene_v60):
        scene, _ = scene_v60
        preds = PredictionSet(scene.scene_id, [table_smasher()], [1.0])
        report = average_precision(preds, scene)
        assert sorted(report.ap_per_mu) == sorted(float(m) for m in DEFAULT_MU_GRID)
        assert scene.scene_id in report.per_scene

    def test_rejects_empty_prediction_set(self, scene_v60):
        scene, _ = scene_v60
        with pytest.raises(ValueError):
            average_precision(PredictionSet("s", [], np.zeros(0)), scene)


class TestAPReport:
    def test_mean_consistency_is_enforced(self):
        APReport({0.4: 1.0, 0.8: 0.5}, 0.75)
        with pytest.raises(InvariantViolation):
            APReport({0.4: 1.0, 0.8: 0.5}, 0.9)

    def test_rejects_out_of_range_values(self):
        with pytest.raises(InvariantViolation):
            APReport({0.4: 1.5}, 1.5)


class TestAggregateReports:
    def r(self, sid, a, b):
        return make_report({0.4: a, 0.8: b}, {sid: {0.4: a, 0.8: b}})

    def test_means_across_scenes(self):
        merged = aggregate_reports([self.r("s1", 1.0, 0.5), self.r("s2", 0.0, 0.5)])
        assert merged.ap_per_mu == {0.4: 0.5, 0.8: 0.5}
        assert merged.ap == 0.5
        assert sorted(merged.per_scene) == ["s1", "s2"]

    def test_rejects_duplicate_scene_ids(self):
        with pytest.raises(ValueError):
            aggregate_reports([self.r("s1", 1.0, 0.5), self.r("s1", 0.0, 0.5)])

    def test_rejects_mismatched_grids(self):
        other = make_report({0.2: 0.5}, {"s2": {0.2: 0.5}})
        with pytest.raises(ValueError):
            aggregate_reports([self.r("s1", 1.0, 0.5), other])

    def test_rejects_empty_input(self):
        with pytest.raises(ValueError):
            aggregate_reports([])


class TestGroundTruthPredictions:
    def test_selection_matches_threshold_oracle(self, scene_v60):
        scene, _ = scene_v60
        mu = 0.4
        threshold = float(np.float32(1.1 - mu))
        total = sum(
            int(np.count_nonzero((sc.scores >= threshold) & ~sc.collided))
            for sc in scene.annotations
        )
        preds = ground_truth_predictions(scene, mu, top_k=10**9)
        assert len(preds) == total
        assert np.all(preds.confidences >= threshold)

    def test_descending_confidence_and_top_k(self, scene_v60):
        scene, _ = scene_v60
        preds = ground_truth_predictions(scene, 0.8, top_k=20)
        assert len(preds) == 20
        assert np.all(np.diff(preds.confidences) <= 0)

    def test_grasps_carry_stored_widths(self, scene_v60):
        scene, _ = scene_v60
        preds = ground_truth_predictions(scene, 0.8, top_k=20)
        stored = np.concatenate(
            [sc.widths[~sc.collided].ravel() for sc in scene.annotations]
        )
        for g in preds.grasps:
            assert np.any(np.float32(g.width) == stored)


class TestGraspnessForCloud:
    def test_exact_points_pick_up_their_graspness(self, scene_v60):
        scene, _ = scene_v60
        pts, gvals = scene.all_grasp_points()
        probe = np.vstack([pts[:25], [[5.0, 5.0, 5.0]]])
        out = graspness_for_cloud(PointCloud(probe), scene)
        np.testing.assert_array_equal(out[:25], gvals[:25])
        assert out[25] == 0.0

    def test_tau_limits_the_match_radius(self, scene_v60):
        scene, _ = scene_v60
        pts, gvals = scene.all_grasp_points()
        shifted = pts[:10] + np.array([0.004, 0.0, 0.0])
        near = graspness_for_cloud(PointCloud(shifted), scene, tau=0.01)
        far = graspness_for_cloud(PointCloud(shifted), scene, tau=0.001)
        assert np.any(near > 0)
        assert np.all(far == 0.0)


@pytest.fixture(scope="module")
def cloud():
    # keep one point per coordinate so reverse lookup by position is unique
    raw = make_box_cloud(spacing=0.004)
    _, keep = np.unique(raw.points, axis=0, return_index=True)
    return PointCloud(raw.points[keep], normals=raw.normals[keep])


@pytest.fixture(scope="module")
def graspness(cloud):
    rng = np.random.default_rng(42)
    return rng.random(len(cloud))


class TestProposeGrasps:
    def test_deterministic(self, cloud, graspness):
        a = propose_grasps(cloud, graspness, top_m=10)
        b = propose_grasps(cloud, graspness, top_m=10)
        assert np.array_equal(a.confidences, b.confidences)
        for ga, gb in zip(a.grasps, b.grasps):
            assert np.array_equal(ga.point, gb.point)
            assert np.array_equal(ga.view, gb.view)
            assert ga.angle == gb.angle and ga.depth == gb.depth

    def test_proposal_geometry(self, cloud, graspness):
        gripper = GripperModel()
        preds = propose_grasps(cloud, graspness, top_m=8, gripper=gripper)
        assert len(preds) == 8
        assert np.all(np.diff(preds.confidences) <= 0)
        index = {tuple(p): i for i, p in enumerate(cloud.points)}
        for g in preds.grasps:
            i = index[tuple(g.point)]
            np.testing.assert_allclose(g.view, -cloud.normals[i], atol=1e-12)
            assert g.width == gripper.max_width
            assert g.angle in gripper.angle_grid()
            assert g.depth in gripper.depth_grid

    def test_confidence_never_exceeds_graspness(self, cloud, graspness):
        preds = propose_grasps(cloud, graspness, top_m=12)
        index = {tuple(p): i for i, p in enumerate(cloud.points)}
        for g, c in zip(preds.grasps, preds.confidences):
            assert c <= graspness[index[tuple(g.point)]] + 1e-15

    def test_bank_factor_only_demotes(self, cloud, graspness):
        bank = init_bank(k=6, c=32, seed=1)
        weights = random_attention_weights(c=32, d_m=32, heads=2, seed=1)
        plain = propose_grasps(cloud, graspness, top_m=6)
        ranked = propose_grasps(cloud, graspness, top_m=6, bank=bank,
                                weights=weights)
        by_point = {
            tuple(g.point): c for g, c in zip(plain.grasps, plain.confidences)
        }
        for g, c in zip(ranked.grasps, ranked.confidences):
            base = by_point[tuple(g.point)]
            assert 0.5 * base - 1e-15 <= c <= base + 1e-15

    def test_zero_graspness_yields_empty_set(self, cloud, caplog):
        with caplog.at_level("WARNING", logger="graspkit.evaluate"):
            preds = propose_grasps(cloud, np.zeros(len(cloud)))
        assert len(preds) == 0

    def test_input_validation(self, cloud, graspness):
        with pytest.raises(ValueError):
            propose_grasps(PointCloud(cloud.points), graspness)
        with pytest.raises(ValueError):
            propose_grasps(cloud, graspness[:-1])


class TestPredictionCsv:
    def some_sets(self):
        rng = np.random.default_rng(3)
        sets = []
        for sid in ("sceneA", "sceneB"):
            grasps = [
                GraspPose(rng.normal(size=3) * 0.01,
                          [0.0, 0.0, -1.0],
                          float(rng.uniform(0, 2 * np.pi)),
                          0.02,
                          float(rng.uniform(0.01, 0.07)))
                for _ in range(4)
            ]
            sets.append(PredictionSet(sid, grasps, rng.random(4)))
        return sets

    def test_round_trip_is_exact(self, tmp_path):
        sets = self.some_sets()
        path = tmp_path / "preds.csv"
        save_predictions(path, sets)
        loaded = {ps.scene_id: ps for ps in load_predictions(path)}
        assert sorted(loaded) == ["sceneA", "sceneB"]
        for original in sets:
            got = loaded[original.scene_id]
            assert np.array_equal(got.confidences, original.confidences)
            for ga, gb in zip(got.grasps, original.grasps):
                assert np.array_equal(ga.point, gb.point)
                assert np.array_equal(ga.view, gb.view)
                assert ga.angle == gb.angle
                assert ga.depth == gb.depth
                assert ga.width == gb.width

    def test_single_set_is_accepted(self, tmp_path):
        path = tmp_path / "one.csv"
        save_predictions(path, self.some_sets()[0])
        assert len(load_predictions(path)) == 1

    def test_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope,really\n1,2\n")
        with pytest.raises(ValueError):
            load_predictions(path)

    def test_rejects_malformed_rows(self, tmp_path):
        sets = self.some_sets()
        path = tmp_path / "trunc.csv"
        save_predictions(path, sets)
        lines = path.read_text().splitlines()
        lines[1] = ",".join(lines[1].split(",")[:-1])
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError):
            load_predictions(path)


class TestReportFiles:
    def report(self):
        return make_report(
            {0.4: 0.25, 0.8: 0.75}, {"sceneA": {0.4: 0.25, 0.8: 0.75}}
        )

    def test_dict_uses_repr_keys(self):
        d = report_to_dict(self.report())
        assert d["ap"] == 0.5
        assert d["ap_per_mu"] == {"0.4": 0.25, "0.8": 0.75}
        assert d["per_scene"]["sceneA"]["0.8"] == 0.75

    def test_json_round_trip_and_determinism(self, tmp_path):
        p1, p2 = tmp_path / "r1.json", tmp_path / "r2.json"
        save_report_json(p1, self.report())
        save_report_json(p2, self.report())
        assert p1.read_bytes() == p2.read_bytes()
        data = json.loads(p1.read_text())
        assert data["ap"] == 0.5
        assert data["ap_per_mu"]["0.4"] == 0.25

    def test_csv_layout(self, tmp_path):
        path = tmp_path / "report.csv"
        save_report_csv(path, self.report())
        lines = path.read_text().splitlines()
        assert lines[0] == "scene_id,AP,AP_0.8,AP_0.4"
        assert lines[1] == "sceneA,0.5,0.75,0.25"
        assert lines[2] == "overall,0.5,0.75,0.25"
