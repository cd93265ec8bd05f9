"""Scene-level grasp annotation: pose projection, collision culling, and
supervision targets.

Object annotations are projected into the world frame by each object's pose.
A world candidate keeps the object-frame grid layout: its full rotation is
rot(R v, theta + offset) where the per-view offset accounts for the pose
rotating the tangent frame, so the (point, view, angle, depth) indexing stays
valid after projection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .annotate import AnnotationTensor, ObjectModel
from .depth_repair import DepthMap
from .errors import InvariantViolation
from .geometry import (
    CameraIntrinsics,
    GripperModel,
    PointCloud,
    RigidTransform,
    rotation_from_view_angle,
    tangent_basis,
)

DEFAULT_HEATMAP_TAU = 0.005
DEFAULT_MASK_TAU = 0.003


@dataclass(frozen=True)
class ScenePose:
    """World pose of one object instance."""

    object_id: str
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or not np.isclose(
            np.linalg.det(r), 1.0, atol=1e-9
        ):
            raise ValueError("pose rotation must be orthonormal with det +1 (1e-9)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def transform(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.translation)


@dataclass
class SceneCandidates:
    """World-frame candidate grid of one posed object.

    views holds the rotated approach directions; theta_offset[j] is the
    in-plane angle the pose adds at view j, so candidate (i, j, a, d) has
    world angle angle_grid[a] + theta_offset[j].
    """

    object_id: str
    grasp_points: np.ndarray
    views: np.ndarray
    theta_offset: np.ndarray
    scores: np.ndarray
    widths: np.ndarray
    collided: np.ndarray
    gripper: GripperModel
    pose: ScenePose

    def __post_init__(self):
        self.grasp_points = np.asarray(self.grasp_points, dtype=np.float64).reshape(-1, 3)
        self.views = np.asarray(self.views, dtype=np.float64).reshape(-1, 3)
        self.theta_offset = np.asarray(self.theta_offset, dtype=np.float64).reshape(-1)
        self.scores = np.asarray(self.scores, dtype=np.float32)
        self.widths = np.asarray(self.widths, dtype=np.float32)
        self.collided = np.asarray(self.collided, dtype=bool)
        self.validate()

    def validate(self):
        p = self.grasp_points.shape[0]
        v = self.views.shape[0]
        a = self.gripper.angle_count
        d = len(self.gripper.depth_grid)
        expect = (p, v, a, d)
        for name in ("scores", "widths", "collided"):
            if getattr(self, name).shape != expect:
                raise InvariantViolation(
                    f"{name} must have shape {expect}, got {getattr(self, name).shape}"
                )
        if self.theta_offset.shape != (v,):
            raise InvariantViolation("theta_offset must have one entry per view")
        if self.scores.size and (self.scores.min() < 0 or self.scores.max() > 1):
            raise InvariantViolation("scores must lie in [0, 1]")
        if np.any(self.scores[self.collided] != 0):
            raise InvariantViolation("collided candidates must have score 0")

    def world_angles(self) -> np.ndarray:
        """(V, A) world in-plane angles of the candidate grid."""
        grid = self.gripper.angle_grid()
        return np.mod(self.theta_offset[:, None] + grid[None, :], 2.0 * np.pi)

    @property
    def grid_shape(self):
        return self.scores.shape


@dataclass
class SceneGroundTruth:
    """Posed objects, their culled world annotations, and the camera."""

    scene_id: str
    objects: list
    annotations: list
    camera_intrinsics: CameraIntrinsics
    camera_pose: RigidTransform
    table: PointCloud | None = None
    _cloud_cache: PointCloud | None = field(default=None, repr=False, compare=False)
    _tree_cache: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ids = [pose.object_id for _, pose in self.objects]
        ann_ids = [sc.object_id for sc in self.annotations]
        if ids != ann_ids:
            raise InvariantViolation(
                f"annotation order {ann_ids} must match object order {ids}"
            )

    def object_clouds(self) -> list:
        """World-frame surface clouds, one per posed object."""
        return [
            obj.surface.transformed(pose.rotation, pose.translation)
            for obj, pose in self.objects
        ]

    def scene_cloud(self) -> PointCloud:
        """Merged world cloud of all object surfaces plus the table, cached."""
        if self._cloud_cache is None:
            clouds = self.object_clouds()
            if self.table is not None:
                clouds.append(self.table)
            if not clouds:
                raise ValueError("scene has no points")
            pts = np.concatenate([c.points for c in clouds], axis=0)
            have_normals = all(c.normals is not None for c in clouds)
            normals = (
                np.concatenate([c.normals for c in clouds], axis=0)
                if have_normals
                else None
            )
            self._cloud_cache = PointCloud(pts, normals)
        return self._cloud_cache

    def object_trees(self) -> list:
        if self._tree_cache is None:
            self._tree_cache = [cKDTree(c.points) for c in self.object_clouds()]
        return self._tree_cache

    def all_grasp_points(self):
        """Stacked world grasp points and per-point graspness over all objects."""
        if not self.annotations:
            return np.zeros((0, 3)), np.zeros(0)
        pts = np.concatenate([sc.grasp_points for sc in self.annotations], axis=0)
        gvals = np.concatenate([compute_graspness(sc)[0] for sc in self.annotations])
        return pts, gvals


@dataclass
class SupervisionTargets:
    """Per-frame training targets: object mask, graspness heatmap, view rates."""

    object_mask: np.ndarray
    graspness_heatmap: np.ndarray
    view_graspness: dict

    def __post_init__(self):
        self.object_mask = np.asarray(self.object_mask, dtype=bool)
        self.graspness_heatmap = np.asarray(self.graspness_heatmap, dtype=np.float64)
        if self.object_mask.shape != self.graspness_heatmap.shape:
            raise InvariantViolation("mask and heatmap must share a shape")
        h = self.graspness_heatmap
        if h.size and (h.min() < 0 or h.max() > 1):
            raise InvariantViolation("heatmap values must lie in [0, 1]")
        if np.any(h[~self.object_mask] != 0):
            raise InvariantViolation("heatmap must be 0 outside the object mask")
        for vg in self.view_graspness.values():
            if vg.size and (vg.min() < 0 or vg.max() > 1):
                raise InvariantViolation("view graspness must lie in [0, 1]")


def project_annotations(scene, annotations) -> list:
    """Project object-frame annotations into the world by each pose.

    scene is a list of (ObjectModel, ScenePose); annotations maps object_id
    to AnnotationTensor. Grasp points map to R p + T, views to R v, and
    scores/widths carry over unchanged. Raises on an unknown object_id.
    """
    out = []
    for obj, pose in scene:
        ann = annotations.get(pose.object_id)
        if ann is None:
            raise ValueError(f"no annotation for object id {pose.object_id!r}")
        if obj.id != pose.object_id or ann.object_id != pose.object_id:
            raise ValueError(
                f"object/pose/annotation ids disagree: {obj.id}, "
                f"{pose.object_id}, {ann.object_id}"
            )
        r = pose.rotation
        points_w = ann.grasp_points @ r.T + pose.translation
        views = ann.view_sphere.views
        views_w = views @ r.T
        offsets = np.empty(views.shape[0])
        for j in range(views.shape[0]):
            # World in-plane zero differs from the rotated object frame by the
            # angle between the world tangent basis and the rotated one.
            closing0 = r @ rotation_from_view_angle(views[j], 0.0)[:, 1]
            t0w, b0w = tangent_basis(views_w[j])
            offsets[j] = np.arctan2(b0w @ closing0, t0w @ closing0) % (2.0 * np.pi)
        out.append(
            SceneCandidates(
                object_id=pose.object_id,
                grasp_points=points_w,
                views=views_w,
                theta_offset=offsets,
                scores=ann.scores.copy(),
                widths=ann.widths.copy(),
                collided=np.zeros(ann.scores.shape, dtype=bool),
                gripper=ann.gripper,
                pose=pose,
            )
        )
    return out


def gripper_body_counts(points, p, v, angles, depths, widths, gripper) -> np.ndarray:
    """Scene points inside the gripper body (fingers + base) per candidate.

    angles: (A,) world in-plane angles; depths: (D,); widths: (A, D). The
    closing region between the jaws is not part of the body: points being
    grasped do not count as collisions. Returns (A, D) integer counts.
    """
    ft = gripper.finger_thickness
    t0, b0 = tangent_basis(v)
    rel = points - p
    alpha = rel @ v
    x0 = rel @ t0
    y0 = rel @ b0
    cos_a = np.cos(angles)
    sin_a = np.sin(angles)
    s = cos_a[:, None] * x0 + sin_a[:, None] * y0        # (A, N)
    h = cos_a[:, None] * y0 - sin_a[:, None] * x0
    slab_h = np.abs(h) <= ft / 2.0
    a_ax = alpha[None, :] + np.asarray(depths)[:, None]  # (D, N)
    finger_ax = (a_ax >= 0.0) & (a_ax <= gripper.finger_length)
    base_ax = (a_ax >= -gripper.base_depth) & (a_ax < 0.0)

    abs_s = np.abs(s)[:, None, :]                        # (A, 1, N)
    half = np.asarray(widths, dtype=np.float64)[..., None] / 2.0
    in_finger = (abs_s > half) & (abs_s <= half + ft) & finger_ax[None, :, :]
    in_base = (abs_s <= half + ft) & base_ax[None, :, :]
    body = (in_finger | in_base) & slab_h[:, None, :]
    return body.sum(axis=-1)


def cull_collisions(candidates: SceneCandidates, scene_cloud: PointCloud,
                    gripper: GripperModel | None = None) -> SceneCandidates:
    """Zero the score of every candidate whose gripper body holds a scene point.

    Every candidate is tested at its stored width (width-0 candidates have a
    degenerate body and are tested like any other). Returns a new
    SceneCandidates with updated scores and collision flags.
    """
    if len(scene_cloud) == 0:
        raise ValueError("scene cloud must be non-empty")
    gripper = gripper or candidates.gripper
    pts = scene_cloud.points
    tree = cKDTree(pts)
    radius = gripper.reach_radius()
    depths = np.asarray(gripper.depth_grid)
    world_angles = candidates.world_angles()

    collided = np.zeros(candidates.scores.shape, dtype=bool)
    p_count, v_count = candidates.scores.shape[:2]
    for i in range(p_count):
        p = candidates.grasp_points[i]
        idx = np.asarray(sorted(tree.query_ball_point(p, radius)), dtype=np.intp)
        if idx.size == 0:
            continue
        sub = pts[idx]
        for j in range(v_count):
            counts = gripper_body_counts(
                sub,
                p,
                candidates.views[j],
                world_angles[j],
                depths,
                candidates.widths[i, j].astype(np.float64),
                gripper,
            )
            collided[i, j] = counts > 0

    scores = candidates.scores.copy()
    scores[collided] = 0.0
    return SceneCandidates(
        object_id=candidates.object_id,
        grasp_points=candidates.grasp_points.copy(),
        views=candidates.views.copy(),
        theta_offset=candidates.theta_offset.copy(),
        scores=scores,
        widths=candidates.widths.copy(),
        collided=collided | candidates.collided,
        gripper=candidates.gripper,
        pose=candidates.pose,
    )


def compute_graspness(candidates: SceneCandidates):
    """Success rates over the full grid: per point and per view.

    graspness[i] = positives / (V*A*D); view_graspness[i, j] = positives at
    view j / (A*D). Collided candidates count in the denominator.
    """
    pos = candidates.scores > 0
    v, a, d = pos.shape[1:]
    graspness = pos.sum(axis=(1, 2, 3)) / float(v * a * d)
    view_graspness = pos.sum(axis=(2, 3)) / float(a * d)
    return graspness, view_graspness


def unproject_depth(depth: DepthMap, camera_pose: RigidTransform):
    """Valid depth pixels to world points.

    Returns (points (M, 3) world, pixel index pair (rows, cols)).
    """
    intr = depth.intrinsics
    valid = depth.valid_mask
    rows, cols = np.nonzero(valid)
    z = depth.values[rows, cols].astype(np.float64) / 1000.0
    x = (cols - intr.cx) / intr.fx * z
    y = (rows - intr.cy) / intr.fy * z
    cam = np.stack([x, y, z], axis=1)
    return camera_pose.apply(cam), (rows, cols)


def synthesize_depth(scene: SceneGroundTruth) -> DepthMap:
    """Z-buffer point-splat depth of the scene cloud from the scene camera."""
    intr = scene.camera_intrinsics
    world = scene.scene_cloud().points
    cam = scene.camera_pose.inverse().apply(world)
    z = cam[:, 2]
    front = z > 1e-6
    cam = cam[front]
    z = z[front]
    u = np.floor(intr.fx * cam[:, 0] / z + intr.cx + 0.5).astype(np.int64)
    v = np.floor(intr.fy * cam[:, 1] / z + intr.cy + 0.5).astype(np.int64)
    inside = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    u, v, z = u[inside], v[inside], z[inside]
    buf = np.full((intr.height, intr.width), np.inf)
    np.minimum.at(buf, (v, u), z * 1000.0)
    buf[~np.isfinite(buf)] = 0.0
    return DepthMap(buf.astype(np.float32), intr)


def render_supervision(
    scene: SceneGroundTruth,
    depth: DepthMap,
    heatmap_tau: float = DEFAULT_HEATMAP_TAU,
    mask_tau: float = DEFAULT_MASK_TAU,
) -> SupervisionTargets:
    """Per-pixel object mask and graspness heatmap, plus per-point view rates.

    Each valid pixel is unprojected to a world point; it takes the graspness
    of its nearest grasp point when that lies within heatmap_tau, else 0. The
    object mask marks pixels whose world point lies within mask_tau of any
    object surface point; the heatmap is zeroed outside the mask.
    """
    if depth.intrinsics != scene.camera_intrinsics:
        raise ValueError("depth intrinsics disagree with the scene camera")
    h, w = depth.shape
    heat = np.zeros((h, w), dtype=np.float64)
    mask = np.zeros((h, w), dtype=bool)

    world, (rows, cols) = unproject_depth(depth, scene.camera_pose)
    if world.shape[0]:
        surf_clouds = scene.object_clouds()
        if surf_clouds:
            surf = np.concatenate([c.points for c in surf_clouds], axis=0)
            d_obj, _ = cKDTree(surf).query(world, k=1)
            mask[rows, cols] = d_obj <= mask_tau

        gp, gvals = scene.all_grasp_points()
        if gp.shape[0]:
            d_gp, nn = cKDTree(gp).query(world, k=1)
            vals = np.where(d_gp <= heatmap_tau, gvals[nn], 0.0)
            heat[rows, cols] = vals

    heat[~mask] = 0.0
    view_graspness = {
        sc.object_id: compute_graspness(sc)[1] for sc in scene.annotations
    }
    return SupervisionTargets(mask, heat, view_graspness)


def make_table_cloud(size_x: float, size_y: float, spacing: float, z: float = 0.0) -> PointCloud:
    """Regular grid plane with +z normals, centered on the origin."""
    if spacing <= 0 or size_x <= 0 or size_y <= 0:
        raise ValueError("table size and spacing must be positive")
    xs = np.arange(-size_x / 2.0, size_x / 2.0 + spacing / 2.0, spacing)
    ys = np.arange(-size_y / 2.0, size_y / 2.0 + spacing / 2.0, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)], axis=1)
    normals = np.tile([0.0, 0.0, 1.0], (pts.shape[0], 1))
    return PointCloud(pts, normals)


def parse_scene_description(path):
    """Read a scene description JSON file.

    Layout: scene_id; objects (object_id, surface PLY path, annotation file
    path, rotation as row-major 9 floats, translation 3 floats); camera
    (intrinsics fields, extrinsics rotation/translation, camera-to-world);
    optional table (size [x, y], spacing, z).
    """
    with open(path, "r", encoding="utf-8") as fh:
        desc = json.load(fh)
    for key in ("scene_id", "objects", "camera"):
        if key not in desc:
            raise ValueError(f"scene description missing {key!r}")
    for entry in desc["objects"]:
        for key in ("object_id", "surface", "annotation", "rotation", "translation"):
            if key not in entry:
                raise ValueError(f"scene object entry missing {key!r}")
    cam = desc["camera"]
    if "intrinsics" not in cam or "extrinsics" not in cam:
        raise ValueError("camera must carry intrinsics and extrinsics")
    return desc


def write_scene_description(path, desc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(desc, fh, sort_keys=True, indent=2)
        fh.write("\n")
