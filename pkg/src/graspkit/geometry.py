"""Core geometric types and operations for parallel-jaw grasp tooling.

Everything works on plain numpy arrays in metric units (meters, radians).
All functions are pure; none mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))

# Tangent reference switches axis when the view gets close to +-x.
_TANGENT_SWITCH = 0.99


def _as_unit(v, name="vector", tol=1e-9):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    n = np.linalg.norm(v)
    if abs(n - 1.0) > tol:
        raise ValueError(f"{name} must be unit length, |v|={n!r}")
    return v


@dataclass(frozen=True)
class GraspPose:
    """Decoupled parallel-jaw grasp: position, approach, in-plane angle, depth, width.

    Attributes:
        point: grasp point on the object surface, meters.
        view: unit approach direction (the gripper travels along +view).
        angle: in-plane rotation about the approach axis, radians in [0, 2pi).
        depth: distance from the grasp point back to the gripper origin along view.
        width: jaw opening, meters, >= 0.
        score: grasp quality in [0, 1].
    """

    point: np.ndarray
    view: np.ndarray
    angle: float
    depth: float
    width: float
    score: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))
        object.__setattr__(self, "view", _as_unit(self.view, "view"))
        if self.width < 0:
            raise ValueError(f"width must be >= 0, got {self.width}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    def rotation(self) -> np.ndarray:
        """Full 3x3 world rotation of the gripper frame."""
        return rotation_from_view_angle(self.view, self.angle)

    def origin(self) -> np.ndarray:
        """Gripper origin (finger-root center), behind the point by depth."""
        return self.point - self.depth * self.view


@dataclass
class PointCloud:
    """Point set with optional unit normals and colors.

    points is (N, 3) float64; normals, when present, are unit length and
    aligned with points row for row.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {self.points.shape}")
        if self.normals is not None:
            self.normals = np.atleast_2d(np.asarray(self.normals, dtype=np.float64))
            if self.normals.shape != self.points.shape:
                raise ValueError("normals must match points shape")
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("normals must be unit length within 1e-6")
        if self.colors is not None:
            self.colors = np.atleast_2d(np.asarray(self.colors, dtype=np.float64))
            if self.colors.shape[0] != self.points.shape[0]:
                raise ValueError("colors must match point count")

    def __len__(self):
        return self.points.shape[0]

    def transformed(self, rotation, translation) -> "PointCloud":
        """Rigidly transformed copy (normals rotate, colors carry over)."""
        r = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64)
        normals = None if self.normals is None else self.normals @ r.T
        return PointCloud(self.points @ r.T + t, normals, self.colors)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation, mapping local coordinates into a parent frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6 or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def apply_vectors(self, vectors):
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class ViewSphere:
    """Set of candidate approach directions covering the unit sphere."""

    views: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.views, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("views must be (V, 3)")
        if np.any(np.abs(np.linalg.norm(v, axis=1) - 1.0) > 1e-9):
            raise ValueError("views must be unit vectors")
        object.__setattr__(self, "views", v)

    @property
    def count(self) -> int:
        return self.views.shape[0]


@dataclass(frozen=True)
class GripperModel:
    """Parallel-jaw gripper dimensions and the candidate grid it is swept over.

    Fingers extend from the origin along the approach axis for finger_length;
    the base block sits behind the origin by base_depth. Finger cross section
    is finger_thickness square. depth_grid holds the approach depths at which
    candidates are generated, angle_count the in-plane rotations per view.
    """

    max_width: float = 0.08
    finger_length: float = 0.04
    finger_thickness: float = 0.01
    base_depth: float = 0.02
    depth_grid: tuple = (0.01, 0.02, 0.03, 0.04)
    angle_count: int = 12

    def __post_init__(self):
        for name in ("max_width", "finger_length", "finger_thickness", "base_depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        grid = tuple(float(d) for d in self.depth_grid)
        if len(grid) == 0 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("depth_grid must be non-empty and strictly increasing")
        if self.angle_count < 1:
            raise ValueError("angle_count must be >= 1")
        object.__setattr__(self, "depth_grid", grid)

    def angle_grid(self) -> np.ndarray:
        """In-plane angles, evenly spaced over [0, 2pi)."""
        a = self.angle_count
        return np.arange(a) * (2.0 * np.pi / a)

    def reach_radius(self) -> float:
        """Radius around the grasp point that bounds every box of the gripper."""
        axial = max(self.finger_length, self.base_depth + max(self.depth_grid))
        lateral = self.max_width / 2.0 + self.finger_thickness
        return float(np.sqrt(axial**2 + lateral**2 + (self.finger_thickness / 2.0) ** 2))


def sample_view_sphere(count: int) -> ViewSphere:
    """Quasi-uniform unit directions from a Fibonacci lattice.

    Deterministic for a fixed count. count=1 degenerates to the +z pole.
    """
    if count < 1:
        raise ValueError(f"view count must be >= 1, got {count}")
    if count == 1:
        return ViewSphere(np.array([[0.0, 0.0, 1.0]]))
    i = np.arange(count, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / count
    phi = i * GOLDEN_ANGLE
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    views = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    views /= np.linalg.norm(views, axis=1, keepdims=True)
    return ViewSphere(views)


def tangent_basis(view) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic tangent frame (t0, b0) completing view to a right-handed triad.

    The reference axis is +x unless the view is nearly parallel to it, then +y.
    """
    v = np.asarray(view, dtype=np.float64)
    e = np.array([1.0, 0.0, 0.0])
    if abs(v @ e) > _TANGENT_SWITCH:
        e = np.array([0.0, 1.0, 0.0])
    t0 = e - (e @ v) * v
    t0 /= np.linalg.norm(t0)
    b0 = np.cross(v, t0)
    return t0, b0


def rotation_from_view_angle(view, angle: float) -> np.ndarray:
    """Gripper rotation whose columns are (approach, closing, vertical) axes.

    Column 0 is the approach direction; the closing axis is the tangent frame
    rotated by angle about the approach axis. Orthonormal with det +1.
    """
    v = _as_unit(view, "view")
    t0, b0 = tangent_basis(v)
    c, s = np.cos(angle), np.sin(angle)
    closing = c * t0 + s * b0
    vertical = c * b0 - s * t0
    return np.column_stack([v, closing, vertical])


def view_angle_from_rotation(rotation) -> tuple[np.ndarray, float]:
    """Inverse of rotation_from_view_angle; angle returned in [0, 2pi)."""
    r = np.asarray(rotation, dtype=np.float64)
    v = r[:, 0].copy()
    v /= np.linalg.norm(v)
    t0, b0 = tangent_basis(v)
    angle = np.arctan2(b0 @ r[:, 1], t0 @ r[:, 1]) % (2.0 * np.pi)
    return v, float(angle)


def cylinder_group(
    cloud: PointCloud,
    center,
    axis,
    radius: float,
    height: float,
    max_points: int,
) -> np.ndarray:
    """Indices of cloud points inside a cylinder centered at center along axis.

    The cylinder spans height/2 on either side of the center. When more than
    max_points fall inside, the lowest indices are kept, which makes repeated
    calls reproducible.
    """
    if radius <= 0 or height <= 0:
        raise ValueError("radius and height must be positive")
    v = _as_unit(axis, "axis")
    rel = cloud.points - np.asarray(center, dtype=np.float64)
    axial = rel @ v
    radial_sq = np.einsum("ij,ij->i", rel, rel) - axial**2
    inside = (np.abs(axial) <= height / 2.0) & (radial_sq <= radius**2)
    idx = np.flatnonzero(inside)
    if max_points is not None and idx.size > max_points:
        idx = idx[:max_points]
    return idx


def _voxel_cells(points: np.ndarray, voxel: float):
    """Integer cell keys and the first-come compact cell index per point."""
    keys = np.floor(points / voxel).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    return first, inverse


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """One centroid per occupied voxel; normals averaged and renormalized.

    Deterministic: output cells are ordered by voxel key. Idempotent for a
    fixed voxel size, since each centroid stays inside its own cell.
    """
    if voxel <= 0:
        raise ValueError(f"voxel must be positive, got {voxel}")
    first, inverse = _voxel_cells(cloud.points, voxel)
    n_cells = first.size
    counts = np.bincount(inverse, minlength=n_cells).astype(np.float64)

    sums = np.zeros((n_cells, 3))
    np.add.at(sums, inverse, cloud.points)
    points = sums / counts[:, None]

    normals = None
    if cloud.normals is not None:
        nsums = np.zeros((n_cells, 3))
        np.add.at(nsums, inverse, cloud.normals)
        norms = np.linalg.norm(nsums, axis=1)
        # Degenerate cells (normals cancel out) fall back to the first point's normal.
        bad = norms < 1e-12
        if np.any(bad):
            nsums[bad] = cloud.normals[first[bad]]
            norms[bad] = 1.0
        normals = nsums / np.maximum(norms, 1e-300)[:, None]
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    colors = None
    if cloud.colors is not None:
        csums = np.zeros((n_cells, cloud.colors.shape[1]))
        np.add.at(csums, inverse, cloud.colors)
        colors = csums / counts[:, None]

    return PointCloud(points, normals, colors)


def estimate_normals(cloud: PointCloud, k: int = 16, viewpoint=None) -> PointCloud:
    """Attach PCA normals estimated from k nearest neighbors.

    Normals are oriented toward the viewpoint (default: the origin), the usual
    convention for single-view clouds whose sensor sits at the frame origin.
    """
    pts = cloud.points
    n = len(pts)
    if n < 3:
        raise ValueError("need at least 3 points to estimate normals")
    k = min(k, n)
    tree = cKDTree(pts)
    _, nbr = tree.query(pts, k=k)
    neigh = pts[nbr]
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]

    vp = np.zeros(3) if viewpoint is None else np.asarray(viewpoint, dtype=np.float64)
    flip = np.einsum("ij,ij->i", normals, vp - pts) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return replace(cloud, normals=normals)
