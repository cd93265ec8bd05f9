"""Annotation simplification: drop barren grasp points, keep the best views.

Grasp points without a single positive candidate are removed; each survivor
keeps its top view_limit approach views ranked by per-view success rate
(ties break to the ascending view index). Retained scores and widths are
bit-identical slices of the input.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import InvariantViolation
from .geometry import GripperModel
from .scene import SceneCandidates

VIEW_KEEP_DEFAULT = 60


@dataclass
class SimplifiedAnnotation:
    """Sparse-view restriction of a scene-level candidate set.

    retained_points indexes grasp points of the source tensor; each row of
    retained_views lists that point's kept view indices in rank order
    (descending success rate, ties ascending). scores/widths are the
    corresponding slices, grasp_points/views the world-frame geometry.
    """

    provenance: str
    retained_points: np.ndarray
    retained_views: np.ndarray
    scores: np.ndarray
    widths: np.ndarray
    grasp_points: np.ndarray
    views: np.ndarray
    theta_offset: np.ndarray
    gripper: GripperModel
    total_views: int

    def __post_init__(self):
        self.retained_points = np.asarray(self.retained_points, dtype=np.int64).reshape(-1)
        self.retained_views = np.asarray(self.retained_views, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float32)
        self.widths = np.asarray(self.widths, dtype=np.float32)
        self.grasp_points = np.asarray(self.grasp_points, dtype=np.float64).reshape(-1, 3)
        self.views = np.asarray(self.views, dtype=np.float64).reshape(-1, 3)
        self.theta_offset = np.asarray(self.theta_offset, dtype=np.float64).reshape(-1)
        self.validate()

    def validate(self):
        if self.retained_views.ndim != 2:
            raise InvariantViolation("retained_views must be 2-D")
        pr = self.retained_points.shape[0]
        n_keep = self.retained_views.shape[1]
        if self.retained_views.shape[0] != pr:
            raise InvariantViolation("retained_views must have one row per retained point")
        if n_keep > self.total_views:
            raise InvariantViolation("cannot retain more views than the source had")
        expect = (pr, n_keep, self.gripper.angle_count, len(self.gripper.depth_grid))
        if self.scores.shape != expect or self.widths.shape != expect:
            raise InvariantViolation(
                f"simplified tensors must have shape {expect}, got scores "
                f"{self.scores.shape}, widths {self.widths.shape}"
            )
        if self.grasp_points.shape[0] != pr:
            raise InvariantViolation("grasp_points must match retained point count")
        if pr == 0:
            return
        if self.retained_views.min() < 0 or self.retained_views.max() >= self.total_views:
            raise InvariantViolation("retained view indices out of range")
        pos = self.scores > 0
        if not np.all(pos.any(axis=(1, 2, 3))):
            raise InvariantViolation("every retained point needs a positive candidate")
        # Rank order: descending success rate, ties by ascending view index.
        rates = pos.sum(axis=(2, 3))
        for i in range(pr):
            row = self.retained_views[i]
            if np.unique(row).size != row.size:
                raise InvariantViolation("retained view indices must be unique")
            key = list(zip(-rates[i], row))
            if key != sorted(key):
                raise InvariantViolation(
                    "retained views must be ranked by success rate, ties by index"
                )

    @property
    def candidate_count(self) -> int:
        return int(self.scores.size)

    def positive_count(self) -> int:
        return int(np.count_nonzero(self.scores > 0))


def _view_identity(ann):
    """Per-point view id rows plus the flat source tensors."""
    if isinstance(ann, SceneCandidates):
        p, v = ann.scores.shape[:2]
        ids = np.broadcast_to(np.arange(v, dtype=np.int64), (p, v))
        return (
            ids,
            ann.scores,
            ann.widths,
            np.arange(p, dtype=np.int64),
            ann.grasp_points,
            ann.views,
            ann.theta_offset,
            ann.gripper,
            ann.object_id,
            v,
        )
    if isinstance(ann, SimplifiedAnnotation):
        return (
            ann.retained_views,
            ann.scores,
            ann.widths,
            ann.retained_points,
            ann.grasp_points,
            ann.views,
            ann.theta_offset,
            ann.gripper,
            ann.provenance,
            ann.total_views,
        )
    raise TypeError(f"cannot simplify {type(ann).__name__}")


def simplify(ann, view_limit: int = VIEW_KEEP_DEFAULT) -> SimplifiedAnnotation:
    """Drop barren points and keep each survivor's top views.

    Views are ranked per point by success rate over the angle/depth block,
    ties broken by ascending view index; the first min(view_limit, V) views
    are kept. Idempotent, and retained entries are bit-identical to input.
    """
    if view_limit < 1:
        raise ValueError("view_limit must be >= 1")
    (view_ids, scores, widths, point_ids, grasp_points, views, theta_offset,
     gripper, provenance, total_views) = _view_identity(ann)

    pos = scores > 0
    keep_rows = np.flatnonzero(pos.any(axis=(1, 2, 3)))
    n_keep = min(view_limit, scores.shape[1])

    if keep_rows.size == 0:
        a = gripper.angle_count
        d = len(gripper.depth_grid)
        return SimplifiedAnnotation(
            provenance=provenance,
            retained_points=np.zeros(0, dtype=np.int64),
            retained_views=np.zeros((0, n_keep), dtype=np.int64),
            scores=np.zeros((0, n_keep, a, d), dtype=np.float32),
            widths=np.zeros((0, n_keep, a, d), dtype=np.float32),
            grasp_points=np.zeros((0, 3)),
            views=views.copy(),
            theta_offset=theta_offset.copy(),
            gripper=gripper,
            total_views=total_views,
        )

    rates = pos[keep_rows].sum(axis=(2, 3))              # (Pr, V)
    # Stable sort on negated rate keeps ascending position order on ties,
    # and positions are already in ascending view-id order per row.
    order = np.argsort(-rates, axis=1, kind="stable")[:, :n_keep]
    rows = np.arange(keep_rows.size)[:, None]
    return SimplifiedAnnotation(
        provenance=provenance,
        retained_points=point_ids[keep_rows],
        retained_views=view_ids[keep_rows][rows, order],
        scores=scores[keep_rows][rows, order],
        widths=widths[keep_rows][rows, order],
        grasp_points=grasp_points[keep_rows],
        views=views.copy(),
        theta_offset=theta_offset.copy(),
        gripper=gripper,
        total_views=total_views,
    )


def compression_stats(before, after: SimplifiedAnnotation) -> dict:
    """Reduction ratios from counted candidates and serialized byte sizes."""
    from . import gann

    _, before_scores, *_rest = _view_identity(before)
    before_id = _rest[-2]
    if after.provenance != before_id:
        raise ValueError(
            f"provenance mismatch: {after.provenance!r} vs {before_id!r}"
        )
    n_before = before_scores.size
    n_after = after.scores.size
    if n_before == 0:
        raise ValueError("cannot compute stats for an empty source")

    buf_before = io.BytesIO()
    gann.save_any(buf_before, before)
    buf_after = io.BytesIO()
    gann.save_any(buf_after, after)
    size_before = buf_before.getbuffer().nbytes
    size_after = buf_after.getbuffer().nbytes

    positives = int(np.count_nonzero(before_scores > 0))
    return {
        "candidate_reduction": 1.0 - n_after / n_before,
        "storage_reduction": 1.0 - size_after / size_before,
        "positive_ratio_before": positives / n_before,
    }
