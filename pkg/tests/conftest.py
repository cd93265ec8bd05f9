"""Shared fixtures: primitive object clouds and a prebuilt annotated scene.

Expensive artifacts (dense annotation grids, culled scenes) are built once
per session; their build time is recorded so the tests that own a runtime
budget can assert against it.
"""

import time

import numpy as np
import pytest

from graspkit.annotate import ObjectModel, annotate_object
from graspkit.config import PipelineConfig, apply_overrides
from graspkit.geometry import CameraIntrinsics, PointCloud, RigidTransform
from graspkit.scene import (
    SceneGroundTruth,
    ScenePose,
    cull_collisions,
    make_table_cloud,
    project_annotations,
    synthesize_depth,
)


def make_box_cloud(sx=0.03, sy=0.03, sz=0.03, spacing=0.002):
    """Axis-aligned box shell centered on the origin, outward axis normals."""
    xs = np.arange(-sx / 2, sx / 2 + spacing / 2, spacing)
    ys = np.arange(-sy / 2, sy / 2 + spacing / 2, spacing)
    zs = np.arange(-sz / 2, sz / 2 + spacing / 2, spacing)
    faces, normals = [], []

    gy, gz = np.meshgrid(ys, zs, indexing="ij")
    for sign in (1.0, -1.0):
        faces.append(np.stack([np.full(gy.size, sign * sx / 2), gy.ravel(), gz.ravel()], 1))
        normals.append(np.tile([sign, 0.0, 0.0], (gy.size, 1)))
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    for sign in (1.0, -1.0):
        faces.append(np.stack([gx.ravel(), np.full(gx.size, sign * sy / 2), gz.ravel()], 1))
        normals.append(np.tile([0.0, sign, 0.0], (gx.size, 1)))
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    for sign in (1.0, -1.0):
        faces.append(np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, sign * sz / 2)], 1))
        normals.append(np.tile([0.0, 0.0, sign], (gx.size, 1)))
    return PointCloud(np.concatenate(faces), np.concatenate(normals))


def make_box_object(object_id="box", **kwargs):
    return ObjectModel(object_id, make_box_cloud(**kwargs))


def make_plates_object(half_gap=0.015, half_side=0.02, n=21, object_id="plates"):
    """Two parallel square plates straddling the yz plane, outward x normals."""
    ys = np.linspace(-half_side, half_side, n)
    zs = np.linspace(-half_side, half_side, n)
    gy, gz = np.meshgrid(ys, zs, indexing="ij")
    right = np.stack([np.full(gy.size, half_gap), gy.ravel(), gz.ravel()], axis=1)
    left = np.stack([np.full(gy.size, -half_gap), gy.ravel(), gz.ravel()], axis=1)
    nrm_r = np.tile([1.0, 0.0, 0.0], (right.shape[0], 1))
    nrm_l = np.tile([-1.0, 0.0, 0.0], (left.shape[0], 1))
    cloud = PointCloud(np.concatenate([right, left]), np.concatenate([nrm_r, nrm_l]))
    return ObjectModel(object_id, cloud)


def make_wedge_object(n=21, object_id="wedge"):
    """Two planes meeting at a right angle, opening upward along +y.

    Both surface normals sit 45 degrees off the x axis, so a grasp closing
    along x needs a friction coefficient of at least 1 to hold.
    """
    us = np.linspace(0.0, 0.03, n)
    zs = np.linspace(-0.02, 0.02, n)
    gu, gz = np.meshgrid(us, zs, indexing="ij")
    s = 1.0 / np.sqrt(2.0)
    p1 = np.stack([gu.ravel() * s, gu.ravel() * s, gz.ravel()], axis=1)
    n1 = np.tile([s, -s, 0.0], (p1.shape[0], 1))
    p2 = np.stack([-gu.ravel() * s, gu.ravel() * s, gz.ravel()], axis=1)
    n2 = np.tile([-s, -s, 0.0], (p2.shape[0], 1))
    cloud = PointCloud(np.concatenate([p1, p2]), np.concatenate([n1, n2]))
    return ObjectModel(object_id, cloud)


def make_sphere_object(radius=0.025, count=600, object_id="sphere"):
    """Fibonacci-spaced sphere shell with radial outward normals."""
    i = np.arange(count, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / count
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return ObjectModel(object_id, PointCloud(radius * dirs, dirs))


OVERHEAD_INTRINSICS = CameraIntrinsics(fx=120.0, fy=120.0, cx=64.0, cy=48.0,
                                       width=128, height=96)


def overhead_camera(height=0.6):
    """Camera looking straight down the world -z axis from above the origin."""
    rot = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    return RigidTransform(rot, np.array([0.0, 0.0, height]))


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def build_scene(scene_id, placements, obj, annotation, table_size=0.3,
                table_spacing=0.004, camera_height=0.6):
    """Assemble a culled ground-truth scene from (rotation, translation) poses.

    Every placement poses the same annotated object; the table sits at z=0.
    """
    poses = [ScenePose(obj.id, rot, np.asarray(t, dtype=np.float64))
             for rot, t in placements]
    objects = [(obj, pose) for pose in poses]
    projected = project_annotations(objects, {obj.id: annotation})
    table = make_table_cloud(table_size, table_size, table_spacing, z=0.0)
    staging = SceneGroundTruth(scene_id, objects, projected,
                               OVERHEAD_INTRINSICS, overhead_camera(camera_height),
                               table)
    cloud = staging.scene_cloud()
    culled = [cull_collisions(sc, cloud) for sc in projected]
    return SceneGroundTruth(scene_id, objects, culled, OVERHEAD_INTRINSICS,
                            overhead_camera(camera_height), table)


@pytest.fixture(scope="session")
def box_object():
    return make_box_object()


@pytest.fixture(scope="session")
def box_ann_v60(box_object):
    """Box annotation at 60 views; the workhorse for scene-level tests."""
    cfg = apply_overrides(PipelineConfig(), views=60)
    return annotate_object(box_object, cfg)


@pytest.fixture(scope="session")
def annotation_v300(box_object):
    """Box annotation at the default 300 views, with its build time."""
    cfg = PipelineConfig()
    start = time.perf_counter()
    ann = annotate_object(box_object, cfg)
    return ann, time.perf_counter() - start


@pytest.fixture(scope="session")
def scene_v60(box_object, box_ann_v60):
    """Single box resting on the table, culled, with its synthetic depth."""
    scene = build_scene("scene-v60", [(np.eye(3), [0.0, 0.0, 0.015])],
                        box_object, box_ann_v60)
    depth = synthesize_depth(scene)
    return scene, depth


@pytest.fixture(scope="session")
def scene_v300(box_object, annotation_v300):
    """Dense-view variant of the resting-box scene."""
    ann, _ = annotation_v300
    scene = build_scene("scene-v300", [(np.eye(3), [0.0, 0.0, 0.015])],
                        box_object, ann)
    depth = synthesize_depth(scene)
    return scene, depth
