"""Serialization for annotation grids, bank checkpoints, and feature sets.

Every format is a binary container (see .container): 8-byte magic, canonical
JSON header, raw little-endian payloads. Annotation files share one magic and
declare their kind (object grid, posed scene grid, or simplified grid) in the
header; loaders reconstruct the full dataclass and re-run its invariants, so
a corrupted file is rejected rather than parsed. Scores and widths are stored
as float32, object-frame grasp points as float32 triples, world-frame
geometry as float64. File-level round-trips are byte-identical.
"""

from __future__ import annotations

import numpy as np

from .annotate import AnnotationTensor
from .container import ContainerError, read_container, write_container
from .enhance import LocalFeature, MemoryBank
from .geometry import GripperModel, ViewSphere
from .scene import SceneCandidates, ScenePose
from .simplify import SimplifiedAnnotation

ANNOTATION_MAGIC = "GANNOT01"
BANK_MAGIC = "GKBANK01"
FEATURE_MAGIC = "GKFEAT01"
GRASPNESS_MAGIC = "GKVGRS01"


def _gripper_meta(g: GripperModel) -> dict:
    return {
        "angle_count": g.angle_count,
        "base_depth": g.base_depth,
        "depth_grid": list(g.depth_grid),
        "finger_length": g.finger_length,
        "finger_thickness": g.finger_thickness,
        "max_width": g.max_width,
    }


def _gripper_from_meta(m: dict) -> GripperModel:
    return GripperModel(
        max_width=float(m["max_width"]),
        finger_length=float(m["finger_length"]),
        finger_thickness=float(m["finger_thickness"]),
        base_depth=float(m["base_depth"]),
        depth_grid=tuple(float(d) for d in m["depth_grid"]),
        angle_count=int(m["angle_count"]),
    )


def save_object_annotation(path, ann: AnnotationTensor) -> None:
    meta = {
        "gripper": _gripper_meta(ann.gripper),
        "kind": "object",
        "object_id": ann.object_id,
        "view_count": ann.view_sphere.count,
    }
    arrays = {
        "grasp_points": ann.grasp_points.astype(np.float32),
        "scores": ann.scores,
        "views": ann.view_sphere.views,
        "widths": ann.widths,
    }
    write_container(path, ANNOTATION_MAGIC, meta, arrays)


def save_scene_candidates(path, sc: SceneCandidates) -> None:
    meta = {
        "gripper": _gripper_meta(sc.gripper),
        "kind": "scene",
        "object_id": sc.object_id,
        "pose": {
            "object_id": sc.pose.object_id,
            "rotation": [float(x) for x in sc.pose.rotation.reshape(-1)],
            "translation": [float(x) for x in sc.pose.translation],
        },
    }
    arrays = {
        "collided": sc.collided.astype(np.uint8),
        "grasp_points": sc.grasp_points,
        "scores": sc.scores,
        "theta_offset": sc.theta_offset,
        "views": sc.views,
        "widths": sc.widths,
    }
    write_container(path, ANNOTATION_MAGIC, meta, arrays)


def save_simplified(path, sa: SimplifiedAnnotation) -> None:
    meta = {
        "gripper": _gripper_meta(sa.gripper),
        "kind": "simplified",
        "provenance": sa.provenance,
        "total_views": int(sa.total_views),
    }
    arrays = {
        "grasp_points": sa.grasp_points,
        "retained_points": sa.retained_points,
        "retained_views": sa.retained_views,
        "scores": sa.scores,
        "theta_offset": sa.theta_offset,
        "views": sa.views,
        "widths": sa.widths,
    }
    write_container(path, ANNOTATION_MAGIC, meta, arrays)


def save_any(path, ann) -> None:
    """Dispatch on the annotation type; path may be a file-like object."""
    if isinstance(ann, AnnotationTensor):
        save_object_annotation(path, ann)
    elif isinstance(ann, SceneCandidates):
        save_scene_candidates(path, ann)
    elif isinstance(ann, SimplifiedAnnotation):
        save_simplified(path, ann)
    else:
        raise TypeError(f"cannot serialize {type(ann).__name__} as an annotation")


def load_annotation(path):
    """Load any annotation kind; invariants re-run on construction."""
    meta, arrays = read_container(path, ANNOTATION_MAGIC)
    kind = meta.get("kind")
    gripper = _gripper_from_meta(meta["gripper"])
    if kind == "object":
        return AnnotationTensor(
            meta["object_id"],
            arrays["grasp_points"].astype(np.float64),
            arrays["scores"],
            arrays["widths"],
            ViewSphere(arrays["views"]),
            gripper,
        )
    if kind == "scene":
        pm = meta["pose"]
        pose = ScenePose(
            pm["object_id"],
            np.asarray(pm["rotation"], dtype=np.float64).reshape(3, 3),
            np.asarray(pm["translation"], dtype=np.float64),
        )
        return SceneCandidates(
            meta["object_id"],
            arrays["grasp_points"],
            arrays["views"],
            arrays["theta_offset"],
            arrays["scores"],
            arrays["widths"],
            arrays["collided"].astype(bool),
            gripper,
            pose,
        )
    if kind == "simplified":
        return SimplifiedAnnotation(
            meta["provenance"],
            arrays["retained_points"],
            arrays["retained_views"],
            arrays["scores"],
            arrays["widths"],
            arrays["grasp_points"],
            arrays["views"],
            arrays["theta_offset"],
            gripper,
            int(meta["total_views"]),
        )
    raise ContainerError(f"unknown annotation kind {kind!r}")


def save_bank(path, bank: MemoryBank) -> None:
    meta = {
        "alpha": bank.alpha,
        "dim": bank.dim,
        "size": bank.size,
        "skipped_count": bank.skipped_count,
        "update_count": bank.update_count,
    }
    arrays = {"entries": bank.entries.astype(np.float32)}
    write_container(path, BANK_MAGIC, meta, arrays)


def load_bank(path) -> MemoryBank:
    meta, arrays = read_container(path, BANK_MAGIC)
    entries = arrays["entries"].astype(np.float64)
    if entries.shape != (int(meta["size"]), int(meta["dim"])):
        raise ContainerError("bank entry shape disagrees with its header")
    return MemoryBank(
        entries,
        float(meta["alpha"]),
        int(meta["update_count"]),
        int(meta["skipped_count"]),
    )


def save_features(path, features) -> None:
    """Store a list of LocalFeature sharing one dimension."""
    if features:
        vectors = np.stack([f.vector for f in features])
        points = np.stack([f.source_point for f in features])
        views = np.stack([f.source_view for f in features])
    else:
        vectors = np.zeros((0, 0))
        points = np.zeros((0, 3))
        views = np.zeros((0, 3))
    meta = {"count": len(features), "dim": int(vectors.shape[1])}
    arrays = {"points": points, "vectors": vectors, "views": views}
    write_container(path, FEATURE_MAGIC, meta, arrays)


def load_features(path) -> list:
    meta, arrays = read_container(path, FEATURE_MAGIC)
    del meta
    return [
        LocalFeature(vec, pt, vw)
        for vec, pt, vw in zip(arrays["vectors"], arrays["points"], arrays["views"])
    ]


def save_graspness(path, object_ids, graspness, view_graspness) -> None:
    """Per-object graspness vectors and per-view rates for one scene."""
    meta = {"object_ids": list(object_ids)}
    arrays = {}
    for i, (g, vg) in enumerate(zip(graspness, view_graspness)):
        arrays[f"graspness_{i}"] = np.asarray(g, dtype=np.float64)
        arrays[f"view_graspness_{i}"] = np.asarray(vg, dtype=np.float64)
    write_container(path, GRASPNESS_MAGIC, meta, arrays)


def load_graspness(path):
    meta, arrays = read_container(path, GRASPNESS_MAGIC)
    ids = list(meta["object_ids"])
    graspness = [arrays[f"graspness_{i}"] for i in range(len(ids))]
    view_graspness = [arrays[f"view_graspness_{i}"] for i in range(len(ids))]
    return ids, graspness, view_graspness
