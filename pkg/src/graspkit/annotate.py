"""Dense object-level grasp annotation.

Candidates live on a grid of grasp points x approach views x in-plane angles
x approach depths. Each candidate gets a width from contact-span adjustment
and a score from an analytic two-contact antipodal friction-cone test swept
over a friction grid.

Frame conventions (see geometry.rotation_from_view_angle): for a candidate
(p, v, theta, d) the gripper origin sits at p - d*v; fingers run from the
origin along +v for finger_length; the jaws close along u(theta). A surface
point q has local coordinates
    axial    a = (q - p) . v + d                  (0 at the finger roots)
    closing  s = cos(t)*x0 + sin(t)*y0            x0 = (q - p) . t0
    vertical h = cos(t)*y0 - sin(t)*x0            y0 = (q - p) . b0
and the closing region is a in [0, L], |s| <= w/2, |h| <= thickness/2.

The batch annotator and the single-candidate entry points run the exact same
element-wise arithmetic through one shared kernel, so a stored tensor entry
and a direct score_grasp call at the stored width agree bitwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvariantViolation
from .geometry import (
    GraspPose,
    GripperModel,
    PointCloud,
    ViewSphere,
    sample_view_sphere,
    tangent_basis,
)

logger = logging.getLogger(__name__)

DEFAULT_MU_GRID = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2)

# Opening clearance added beyond the contact span.
WIDTH_CLEARANCE = 0.002

# Friction-cone boundary slack: a contact line exactly on the cone counts as
# inside, and rigid-motion round-off cannot flip a boundary case.
CONE_EPS = 1e-9

_WIDTH_ITER_CAP = 64


@dataclass
class ObjectModel:
    """Object identity plus a dense surface sample with outward unit normals."""

    id: str
    surface: PointCloud
    mesh_vertices: np.ndarray | None = None
    mesh_faces: np.ndarray | None = None

    def __post_init__(self):
        if len(self.surface) == 0:
            raise ValueError("object surface sample must be non-empty")
        if self.surface.normals is None:
            raise ValueError("object surface must carry normals")


@dataclass
class AnnotationTensor:
    """Scores and widths over the P x V x A x D candidate grid of one object."""

    object_id: str
    grasp_points: np.ndarray
    scores: np.ndarray
    widths: np.ndarray
    view_sphere: ViewSphere
    gripper: GripperModel

    def __post_init__(self):
        self.grasp_points = np.asarray(self.grasp_points, dtype=np.float64).reshape(-1, 3)
        self.scores = np.asarray(self.scores, dtype=np.float32)
        self.widths = np.asarray(self.widths, dtype=np.float32)
        self.validate()

    def validate(self):
        p = self.grasp_points.shape[0]
        expect = (
            p,
            self.view_sphere.count,
            self.gripper.angle_count,
            len(self.gripper.depth_grid),
        )
        if self.scores.shape != expect or self.widths.shape != expect:
            raise InvariantViolation(
                f"annotation tensors must have shape {expect}, got scores "
                f"{self.scores.shape}, widths {self.widths.shape}"
            )
        if self.scores.size:
            if self.scores.min() < 0.0 or self.scores.max() > 1.0:
                raise InvariantViolation("scores must lie in [0, 1]")
            # Widths are stored float32; compare against the float32 cap so an
            # opening equal to max_width survives the rounding.
            cap = float(np.float32(self.gripper.max_width))
            if self.widths.min() < 0.0 or float(self.widths.max()) > cap:
                raise InvariantViolation("widths must lie in [0, max_width]")

    @property
    def candidates_per_point(self) -> int:
        return int(np.prod(self.scores.shape[1:]))

    def positive_count(self) -> int:
        return int(np.count_nonzero(self.scores > 0))


def mu_cone_cosines(mu_grid) -> np.ndarray:
    """cos of the friction-cone half angle per mu: 1/sqrt(1 + mu^2)."""
    mu = np.asarray(mu_grid, dtype=np.float64)
    if mu.ndim != 1 or mu.size == 0 or np.any(mu <= 0):
        raise ValueError("mu grid must be 1-D and positive")
    if np.any(np.diff(mu) <= 0):
        raise ValueError("mu grid must be strictly increasing")
    return 1.0 / np.sqrt(1.0 + mu * mu)


def sample_grasp_points(obj: ObjectModel, voxel: float) -> np.ndarray:
    """One surface point per occupied voxel, the sample nearest its cell center.

    Returns (P, 3) float64 rows of the surface sample, ordered by voxel key.
    Deterministic; ties inside a cell break to the lowest point index.
    """
    if voxel <= 0:
        raise ValueError(f"voxel must be positive, got {voxel}")
    pts = obj.surface.points
    keys = np.floor(pts / voxel).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    centers = (keys + 0.5) * voxel
    d2 = np.einsum("ij,ij->i", pts - centers, pts - centers)
    order = np.lexsort((np.arange(len(pts)), d2, inverse))
    _, firsts = np.unique(inverse[order], return_index=True)
    winners = order[firsts]
    return pts[winners].copy()


def _frame_coords(points, p, v, t0, b0):
    """Axial and tangent-plane coordinates of points relative to p."""
    rel = points - p
    alpha = rel @ v
    x0 = rel @ t0
    y0 = rel @ b0
    return alpha, x0, y0


def _closing_coords(x0, y0, cos_a, sin_a):
    """Closing (s) and vertical (h) coordinates per in-plane angle."""
    s = cos_a * x0 + sin_a * y0
    h = cos_a * y0 - sin_a * x0
    return s, h


def _contact_extrema(s_b, side_plus, side_minus):
    """Innermost-face contacts: max s on the + side, min s on the - side."""
    plus = np.where(side_plus, s_b, -np.inf)
    i1 = np.argmax(plus, axis=-1)
    s1 = np.take_along_axis(plus, i1[..., None], axis=-1)[..., 0]
    minus = np.where(side_minus, s_b, np.inf)
    i2 = np.argmin(minus, axis=-1)
    s2 = np.take_along_axis(minus, i2[..., None], axis=-1)[..., 0]
    return i1, s1, i2, s2


def _cone_success(u, n1, n2, mu_cos):
    """Antipodal friction-cone test per candidate and per mu.

    u: (A, 3) closing directions; n1, n2: (A, D, 3) outward contact normals.
    The + contact is pressed along -u and the - contact along +u, so success
    at mu needs u.n1 >= cos(atan mu) and -u.n2 >= cos(atan mu).
    """
    dot1 = np.einsum("ai,adi->ad", u, n1)
    dot2 = np.einsum("ai,adi->ad", u, n2)
    ok1 = dot1[..., None] >= mu_cos - CONE_EPS
    ok2 = -dot2[..., None] >= mu_cos - CONE_EPS
    return ok1 & ok2


def _grid_eval(
    points,
    normals,
    p,
    v,
    cos_a,
    sin_a,
    depths,
    gripper,
    mu_grid,
    mu_cos,
    contact_half_width,
    adjust,
):
    """Contact search, width handling, and friction scoring at one (p, v).

    cos_a/sin_a are (A,) and depths (D,); evaluates the full A x D grid.
    In adjust mode the contact search spans max_width and each candidate gets
    the smallest collision-free containing width (invalid candidates get
    width 0, score 0). In fixed mode the search spans contact_half_width and
    no width or collision logic runs.

    Returns a dict with scores, widths, valid, has, i1, i2, s1, s2, u.
    """
    ft = gripper.finger_thickness
    length = gripper.finger_length
    max_w = gripper.max_width
    t0, b0 = tangent_basis(v)
    alpha, x0, y0 = _frame_coords(points, p, v, t0, b0)
    s, h = _closing_coords(x0, y0, cos_a[:, None], sin_a[:, None])  # (A, N)

    slab_h = np.abs(h) <= ft / 2.0                      # (A, N)
    a_ax = alpha[None, :] + depths[:, None]             # (D, N)
    axial_ok = (a_ax >= 0.0) & (a_ax <= length)         # (D, N)
    slab = slab_h[:, None, :] & axial_ok[None, :, :]    # (A, D, N)

    within = np.abs(s) <= contact_half_width            # (A, N)
    region = slab & within[:, None, :]
    s_b = np.broadcast_to(s[:, None, :], region.shape)
    i1, s1, i2, s2 = _contact_extrema(
        s_b, region & (s_b >= 0.0), region & (s_b < 0.0)
    )
    has = np.isfinite(s1) & np.isfinite(s2)

    if adjust:
        w_req = 2.0 * np.maximum(s1, -s2) + WIDTH_CLEARANCE
        w = np.where(has, w_req, np.inf)
        abs_s = np.abs(s_b)
        for _ in range(_WIDTH_ITER_CAP):
            # A finger spans (w/2, w/2 + ft] in |s|; widen past any intruder.
            active = np.isfinite(w) & (w <= max_w)
            half = w[..., None] / 2.0
            obs = slab & (abs_s > half) & (abs_s <= half + ft) & active[..., None]
            if not obs.any():
                break
            o_max = np.max(np.where(obs, abs_s, -np.inf), axis=-1)
            w = np.where(np.isfinite(o_max), np.maximum(w, 2.0 * o_max), w)
        half = w[..., None] / 2.0
        finger_clear = ~(slab & (abs_s > half) & (abs_s <= half + ft)).any(axis=-1)
        base_ax = (a_ax >= -gripper.base_depth) & (a_ax < 0.0)
        base_slab = slab_h[:, None, :] & base_ax[None, :, :]
        base_clear = ~(base_slab & (abs_s <= half + ft)).any(axis=-1)
        valid = has & (w <= max_w) & finger_clear & base_clear
        widths = np.where(valid, w, 0.0)
    else:
        valid = has
        widths = np.where(valid, 2.0 * contact_half_width, 0.0)

    u = cos_a[:, None] * t0[None, :] + sin_a[:, None] * b0[None, :]  # (A, 3)
    success = _cone_success(u, normals[i1], normals[i2], mu_cos)
    any_succ = success.any(axis=-1)
    first = np.argmax(success, axis=-1)
    score = np.clip(1.1 - mu_grid[first], 0.0, 1.0)
    scores = np.where(valid & any_succ, score, 0.0)
    return {
        "scores": scores,
        "widths": widths,
        "valid": valid,
        "has": has,
        "i1": i1,
        "i2": i2,
        "s1": s1,
        "s2": s2,
        "u": u,
    }


def _single_eval(surface, g, gripper, mu_grid, mu_cos, adjust):
    mu_grid = np.asarray(mu_grid, dtype=np.float64)
    cos_a = np.cos(np.array([g.angle]))
    sin_a = np.sin(np.array([g.angle]))
    depths = np.array([g.depth])
    half = gripper.max_width / 2.0 if adjust else g.width / 2.0
    return _grid_eval(
        surface.points,
        surface.normals,
        g.point,
        g.view,
        cos_a,
        sin_a,
        depths,
        gripper,
        mu_grid,
        mu_cos,
        half,
        adjust,
    )


def score_grasp(
    obj: ObjectModel,
    g: GraspPose,
    mu_grid=DEFAULT_MU_GRID,
    gripper: GripperModel | None = None,
):
    """Analytic antipodal score of one grasp at its given width.

    Finds one contact per jaw (the surface point each closing face meets
    first) inside the closing region, then sweeps the friction grid: the
    grasp succeeds at mu when the line between contacts lies inside both
    friction cones. Score is max(0, min(1, 1.1 - mu_min)) for the smallest
    succeeding mu; 0 when nothing succeeds or a jaw region is empty.

    Returns (score, contacts); contacts is a pair of 3-vectors on the closing
    axis (vertical/axial offsets collapsed), or None when missing.
    """
    gripper = gripper or GripperModel()
    mu_grid = np.asarray(mu_grid, dtype=np.float64)
    mu_cos = mu_cone_cosines(mu_grid)
    r = _single_eval(obj.surface, g, gripper, mu_grid, mu_cos, adjust=False)
    if not r["has"][0, 0]:
        return 0.0, None
    mid = g.point + (gripper.finger_length / 2.0 - g.depth) * g.view
    u0 = r["u"][0]
    c1 = mid + r["s1"][0, 0] * u0
    c2 = mid + r["s2"][0, 0] * u0
    return float(r["scores"][0, 0]), (c1, c2)


def grasp_success_at(
    surface: PointCloud,
    g: GraspPose,
    mu_values,
    gripper: GripperModel | None = None,
) -> np.ndarray:
    """Force-closure success of one grasp at each mu in mu_values.

    Works directly on a point cloud (any frame), using the same contact
    search as score_grasp at the grasp's own width. Returns (M,) booleans,
    all False when contacts are missing.
    """
    gripper = gripper or GripperModel()
    mu = np.asarray(mu_values, dtype=np.float64)
    mu_cos = mu_cone_cosines(mu)
    cos_a = np.cos(np.array([g.angle]))
    sin_a = np.sin(np.array([g.angle]))
    depths = np.array([g.depth])
    r = _grid_eval(
        surface.points,
        surface.normals,
        g.point,
        g.view,
        cos_a,
        sin_a,
        depths,
        gripper,
        mu,
        mu_cos,
        g.width / 2.0,
        adjust=False,
    )
    if not r["has"][0, 0]:
        return np.zeros(mu.shape, dtype=bool)
    u = r["u"]
    n1 = surface.normals[r["i1"]]
    n2 = surface.normals[r["i2"]]
    return _cone_success(u, n1, n2, mu_cos)[0, 0]


def adjust_width(
    obj: ObjectModel,
    g: GraspPose,
    gripper: GripperModel | None = None,
) -> float | None:
    """Smallest opening that contains the contacts and clears the gripper body.

    Contacts are searched at max_width; the result is the contact span about
    the closing axis plus a fixed clearance, grown until neither finger
    volume holds a surface point. None when a jaw region is empty, the
    required width exceeds max_width, or the base block hits the surface.
    """
    gripper = gripper or GripperModel()
    if g.width > gripper.max_width:
        raise ValueError("grasp width exceeds gripper max_width")
    mu_grid = np.asarray(DEFAULT_MU_GRID, dtype=np.float64)
    mu_cos = mu_cone_cosines(mu_grid)
    r = _single_eval(obj.surface, g, gripper, mu_grid, mu_cos, adjust=True)
    if not r["valid"][0, 0]:
        return None
    return float(r["widths"][0, 0])


def annotate_object(obj: ObjectModel, cfg) -> AnnotationTensor:
    """Score and width for the full grasp-point x view x angle x depth grid.

    cfg provides views (count), gripper (GripperModel), mu_grid, and
    grasp_voxel. Deterministic for a fixed cfg; every tensor entry equals the
    corresponding score_grasp / adjust_width call bitwise.
    """
    gripper: GripperModel = cfg.gripper
    view_sphere = sample_view_sphere(cfg.views)
    mu_grid = np.asarray(cfg.mu_grid, dtype=np.float64)
    mu_cos = mu_cone_cosines(mu_grid)
    angles = gripper.angle_grid()
    cos_a = np.cos(angles)
    sin_a = np.sin(angles)
    depths = np.asarray(gripper.depth_grid, dtype=np.float64)

    grasp_points = sample_grasp_points(obj, cfg.grasp_voxel)
    p_count = grasp_points.shape[0]
    v_count = view_sphere.count
    shape = (p_count, v_count, gripper.angle_count, depths.size)
    scores = np.zeros(shape, dtype=np.float32)
    widths = np.zeros(shape, dtype=np.float32)

    points = obj.surface.points
    normals = obj.surface.normals
    tree = cKDTree(points)
    radius = gripper.reach_radius()
    half_w = gripper.max_width / 2.0

    for i in range(p_count):
        p = grasp_points[i]
        idx = np.asarray(sorted(tree.query_ball_point(p, radius)), dtype=np.intp)
        if idx.size == 0:
            continue
        sub_pts = points[idx]
        sub_nrm = normals[idx]
        for j in range(v_count):
            r = _grid_eval(
                sub_pts,
                sub_nrm,
                p,
                view_sphere.views[j],
                cos_a,
                sin_a,
                depths,
                gripper,
                mu_grid,
                mu_cos,
                half_w,
                adjust=True,
            )
            scores[i, j] = r["scores"]
            widths[i, j] = r["widths"]
        if p_count >= 20 and (i + 1) % 10 == 0:
            logger.debug("annotated %d/%d grasp points", i + 1, p_count)

    return AnnotationTensor(obj.id, grasp_points, scores, widths, view_sphere, gripper)
