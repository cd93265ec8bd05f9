"""Grasp-set evaluation and a geometric proposer.

A prediction is judged successful at friction mu when its gripper body is
collision-free against the whole scene cloud and the grasp achieves antipodal
force closure at that mu against its nearest object. AP_mu is the mean of
Precision@k over the top-50 predictions by confidence (short lists padded
with failures); AP averages AP_mu over the friction grid.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .annotate import DEFAULT_MU_GRID, grasp_success_at
from .enhance import enhance, extract_descriptor
from .errors import InvariantViolation
from .geometry import GraspPose, GripperModel, PointCloud
from .scene import DEFAULT_HEATMAP_TAU, SceneGroundTruth, gripper_body_counts

logger = logging.getLogger(__name__)

TOP_K_DEFAULT = 50

# Collision-proxy penetration saturates at this many intruding points.
_PENETRATION_NORM = 16.0

CSV_COLUMNS = (
    "scene_id",
    "px",
    "py",
    "pz",
    "vx",
    "vy",
    "vz",
    "theta",
    "depth",
    "width",
    "confidence",
)


@dataclass
class PredictionSet:
    """Scored grasp predictions for one scene, descending by confidence.

    Ties keep their insertion order (stable sort), so equal-confidence
    predictions are ranked by the order the producer emitted them.
    """

    scene_id: str
    grasps: list
    confidences: np.ndarray

    def __post_init__(self):
        conf = np.asarray(self.confidences, dtype=np.float64).reshape(-1)
        if conf.shape[0] != len(self.grasps):
            raise ValueError("one confidence per grasp required")
        if conf.size and not np.all(np.isfinite(conf)):
            raise InvariantViolation("confidences must be finite")
        order = np.argsort(-conf, kind="stable")
        self.grasps = [self.grasps[i] for i in order]
        self.confidences = conf[order]

    def __len__(self):
        return len(self.grasps)


@dataclass
class APReport:
    """AP per friction value, their mean, and a per-scene breakdown."""

    ap_per_mu: dict
    ap: float
    per_scene: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in self.ap_per_mu.values():
            if not 0.0 <= v <= 1.0:
                raise InvariantViolation("AP values must lie in [0, 1]")
        if self.ap_per_mu:
            mean = float(np.mean(list(self.ap_per_mu.values())))
            if abs(self.ap - mean) > 1e-12:
                raise InvariantViolation("ap must equal the mean over the mu grid")


def make_report(ap_per_mu: dict, per_scene: dict) -> APReport:
    ap = float(np.mean(list(ap_per_mu.values()))) if ap_per_mu else 0.0
    return APReport(ap_per_mu, ap, per_scene)


def _closing_center(g: GraspPose, gripper: GripperModel) -> np.ndarray:
    return g.point + (gripper.finger_length / 2.0 - g.depth) * g.view


def _nearest_object_index(g: GraspPose, scene: SceneGroundTruth,
                          gripper: GripperModel) -> int:
    c = _closing_center(g, gripper)
    best, best_d = 0, np.inf
    for i, tree in enumerate(scene.object_trees()):
        d, _ = tree.query(c)
        if d < best_d:
            best, best_d = i, d
    return best


def collides_with_scene(g: GraspPose, scene: SceneGroundTruth,
                        gripper: GripperModel) -> bool:
    """True when any scene point falls inside the gripper body at g."""
    cloud = scene.scene_cloud()
    counts = gripper_body_counts(
        cloud.points,
        g.point,
        g.view,
        np.array([g.angle]),
        np.array([g.depth]),
        np.array([[g.width]]),
        gripper,
    )
    return bool(counts[0, 0] > 0)


def judge_grasp(g: GraspPose, scene: SceneGroundTruth, mu: float,
                gripper: GripperModel | None = None) -> bool:
    """Collision-free against the scene and force-closure at mu.

    The grasp is matched to the object whose surface lies nearest the center
    of its closing region. An empty scene judges false.
    """
    if float(mu) <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    gripper = gripper if gripper is not None else GripperModel()
    if not scene.objects:
        return False
    if collides_with_scene(g, scene, gripper):
        return False
    idx = _nearest_object_index(g, scene, gripper)
    surface = scene.object_clouds()[idx]
    return bool(grasp_success_at(surface, g, np.array([float(mu)]), gripper)[0])


def ap_from_judgments(judgments, top_k: int = TOP_K_DEFAULT) -> float:
    """Mean of Precision@k over k = 1..top_k; short lists pad with failures."""
    j = np.zeros(top_k, dtype=bool)
    arr = np.asarray(judgments, dtype=bool).reshape(-1)[:top_k]
    j[: arr.size] = arr
    precision = np.cumsum(j) / np.arange(1, top_k + 1)
    return float(precision.mean())


def average_precision(
    preds: PredictionSet,
    scene: SceneGroundTruth,
    mu_grid=DEFAULT_MU_GRID,
    top_k: int = TOP_K_DEFAULT,
    gripper: GripperModel | None = None,
) -> APReport:
    """AP_mu over the friction grid for the top-k predictions of one scene."""
    if len(preds.grasps) == 0:
        raise ValueError("prediction set is empty")
    gripper = gripper if gripper is not None else GripperModel()
    mu = np.asarray(mu_grid, dtype=np.float64)
    top = preds.grasps[:top_k]
    judgments = np.zeros((mu.size, len(top)), dtype=bool)
    if scene.objects:
        clouds = scene.object_clouds()
        for k, g in enumerate(top):
            if collides_with_scene(g, scene, gripper):
                continue
            idx = _nearest_object_index(g, scene, gripper)
            judgments[:, k] = grasp_success_at(clouds[idx], g, mu, gripper)
    ap_per_mu = {
        float(m): ap_from_judgments(judgments[i], top_k) for i, m in enumerate(mu)
    }
    return make_report(ap_per_mu, {preds.scene_id: dict(ap_per_mu)})


def aggregate_reports(reports) -> APReport:
    """Mean AP_mu across scene reports; per-scene breakdowns merge."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    keys = sorted(reports[0].ap_per_mu)
    for r in reports[1:]:
        if sorted(r.ap_per_mu) != keys:
            raise ValueError("reports use different friction grids")
    ap_per_mu = {
        k: float(np.mean([r.ap_per_mu[k] for r in reports])) for k in keys
    }
    per_scene = {}
    for r in reports:
        for sid, vals in r.per_scene.items():
            if sid in per_scene:
                raise ValueError(f"duplicate scene id {sid!r}")
            per_scene[sid] = vals
    return make_report(ap_per_mu, per_scene)


def ground_truth_predictions(scene: SceneGroundTruth, mu: float,
                             top_k: int = TOP_K_DEFAULT) -> PredictionSet:
    """Stored positive candidates succeeding at friction mu, as predictions.

    A candidate qualifies when its score reaches 1.1 - mu (float32 rounded)
    and it was not culled; confidence is its stored score.
    """
    threshold = float(np.float32(1.1 - float(mu)))
    grasps, confs = [], []
    for sc in scene.annotations:
        hits = np.argwhere((sc.scores >= threshold) & ~sc.collided)
        angles = sc.world_angles()
        depth_grid = np.asarray(sc.gripper.depth_grid, dtype=np.float64)
        for i, j, a, d in hits:
            score = float(sc.scores[i, j, a, d])
            grasps.append(
                GraspPose(
                    sc.grasp_points[i],
                    sc.views[j],
                    float(angles[j, a]),
                    float(depth_grid[d]),
                    float(sc.widths[i, j, a, d]),
                    score,
                )
            )
            confs.append(score)
    ordered = PredictionSet(scene.scene_id, grasps, np.asarray(confs))
    return PredictionSet(
        scene.scene_id, ordered.grasps[:top_k], ordered.confidences[:top_k]
    )


def graspness_for_cloud(cloud: PointCloud, scene: SceneGroundTruth,
                        tau: float = DEFAULT_HEATMAP_TAU) -> np.ndarray:
    """Per-point graspness: nearest scene grasp point within tau, else 0."""
    pts, gvals = scene.all_grasp_points()
    out = np.zeros(len(cloud))
    if pts.shape[0] == 0:
        return out
    dist, idx = cKDTree(pts).query(cloud.points)
    hit = dist <= tau
    out[hit] = gvals[idx[hit]]
    return out


def _bank_agreement(cloud, pose, bank, weights, gripper) -> float:
    """Confidence factor from enhanced-descriptor agreement with the bank.

    0.5 + 0.5 * max(0, best cosine similarity), so the factor lives in
    [0.5, 1] and never promotes a grasp, only demotes disagreement.
    """
    try:
        feat = extract_descriptor(cloud, pose.point, pose.view, gripper,
                                  dim=bank.dim)
    except ValueError:
        return 0.5
    vec = enhance([feat], bank, weights)[0].vector
    nv = np.linalg.norm(vec)
    ne = np.linalg.norm(bank.entries, axis=1)
    if nv == 0 or not np.any(ne > 0):
        return 0.5
    cos = float(np.max((bank.entries @ vec) / np.maximum(ne * nv, 1e-300)))
    return 0.5 + 0.5 * max(0.0, cos)


def propose_grasps(
    cloud: PointCloud,
    graspness,
    top_m: int = TOP_K_DEFAULT,
    gripper: GripperModel | None = None,
    scene_id: str = "scene",
    bank=None,
    weights=None,
) -> PredictionSet:
    """One grasp proposal per high-graspness point, approach against the normal.

    Takes the top_m points by graspness (ties by ascending index), sets the
    approach to -normal, and sweeps the angle/depth grid at full opening,
    keeping the (angle, depth) cell whose gripper body swallows the fewest
    cloud points. Confidence is graspness scaled down by that penetration
    count (saturating), optionally times the bank-agreement factor when a
    bank and attention weights are supplied. Deterministic.
    """
    gripper = gripper if gripper is not None else GripperModel()
    if cloud.normals is None:
        raise ValueError("proposal needs normals")
    g = np.asarray(graspness, dtype=np.float64).reshape(-1)
    if g.shape[0] != len(cloud):
        raise ValueError("one graspness value per point required")
    order = np.argsort(-g, kind="stable")
    order = order[g[order] > 0][:top_m]
    if order.size == 0:
        logger.warning("no graspable points; returning an empty prediction set")
        return PredictionSet(scene_id, [], np.zeros(0))

    angles = gripper.angle_grid()
    depths = np.asarray(gripper.depth_grid, dtype=np.float64)
    widths = np.full((angles.size, depths.size), gripper.max_width)
    grasps, confs = [], []
    for pi in order:
        p = cloud.points[pi]
        view = -cloud.normals[pi]
        counts = gripper_body_counts(
            cloud.points, p, view, angles, depths, widths, gripper
        )
        a, d = np.unravel_index(np.argmin(counts), counts.shape)
        pen = float(counts[a, d])
        conf = float(g[pi]) * (1.0 - min(1.0, pen / _PENETRATION_NORM))
        pose = GraspPose(
            p, view, float(angles[a]), float(depths[d]), gripper.max_width
        )
        if bank is not None and weights is not None:
            conf *= _bank_agreement(cloud, pose, bank, weights, gripper)
        grasps.append(pose)
        confs.append(conf)
    return PredictionSet(scene_id, grasps, np.asarray(confs))


def save_predictions(path, sets) -> None:
    """Write prediction sets as CSV with full-precision decimal floats."""
    if isinstance(sets, PredictionSet):
        sets = [sets]
    lines = [",".join(CSV_COLUMNS)]
    for ps in sets:
        for g, c in zip(ps.grasps, ps.confidences):
            vals = [*g.point, *g.view, g.angle, g.depth, g.width, c]
            lines.append(",".join([ps.scene_id] + [repr(float(x)) for x in vals]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def load_predictions(path) -> list:
    """Parse a prediction CSV into PredictionSets grouped by scene id."""
    groups = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ValueError(
                f"prediction CSV must start with {','.join(CSV_COLUMNS)}"
            )
        for row in reader:
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"malformed prediction row: {row!r}")
            vals = [float(x) for x in row[1:]]
            pose = GraspPose(vals[0:3], vals[3:6], vals[6], vals[7], vals[8])
            bucket = groups.setdefault(row[0], ([], []))
            bucket[0].append(pose)
            bucket[1].append(vals[9])
    return [
        PredictionSet(sid, grasps, np.asarray(confs))
        for sid, (grasps, confs) in groups.items()
    ]


def report_to_dict(report: APReport) -> dict:
    return {
        "ap": report.ap,
        "ap_per_mu": {
            repr(float(k)): v for k, v in sorted(report.ap_per_mu.items())
        },
        "per_scene": {
            sid: {repr(float(k)): v for k, v in sorted(vals.items())}
            for sid, vals in sorted(report.per_scene.items())
        },
    }


def save_report_json(path, report: APReport) -> None:
    text = json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _mu_column(vals: dict, mu: float) -> str:
    return repr(vals[mu]) if mu in vals else ""


def save_report_csv(path, report: APReport) -> None:
    """Summary table: AP with the 0.8 and 0.4 friction columns broken out."""
    lines = ["scene_id,AP,AP_0.8,AP_0.4"]
    for sid in sorted(report.per_scene):
        vals = report.per_scene[sid]
        ap = float(np.mean(list(vals.values()))) if vals else 0.0
        lines.append(
            ",".join([sid, repr(ap), _mu_column(vals, 0.8), _mu_column(vals, 0.4)])
        )
    lines.append(
        ",".join(
            [
                "overall",
                repr(report.ap),
                _mu_column(report.ap_per_mu, 0.8),
                _mu_column(report.ap_per_mu, 0.4),
            ]
        )
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
