"""Grasp annotation, scene supervision, depth repair, and evaluation toolkit.

The package covers the non-learned core of a real-to-sim grasp pipeline:
candidate-grid annotation of object clouds with analytic antipodal scoring,
projection into posed scenes with collision culling and supervision targets,
annotation simplification, residual depth repair with a synthetic sensor
noise model, local structural descriptors with a momentum memory bank and
cross-attention enhancement, and AP-based grasp evaluation. Everything is
deterministic for fixed seeds and all file formats round-trip bit-exactly.
"""

from .annotate import (
    AnnotationTensor,
    DEFAULT_MU_GRID,
    ObjectModel,
    adjust_width,
    annotate_object,
    grasp_success_at,
    sample_grasp_points,
    score_grasp,
)
from .config import PipelineConfig, apply_overrides, load_config, save_config
from .depth_repair import (
    DepthMap,
    NoiseModel,
    ResidualMap,
    apply_repair,
    corrupt,
    make_residual_label,
    rmse,
    smoothing_repairer,
)
from .enhance import (
    AttentionWeights,
    LocalFeature,
    MemoryBank,
    bank_update,
    enhance,
    extract_descriptor,
    init_bank,
)
from .errors import InvariantViolation
from .evaluate import (
    APReport,
    PredictionSet,
    average_precision,
    judge_grasp,
    propose_grasps,
)
from .geometry import (
    CameraIntrinsics,
    GraspPose,
    GripperModel,
    PointCloud,
    RigidTransform,
    ViewSphere,
    estimate_normals,
    sample_view_sphere,
    voxel_downsample,
)
from .scene import (
    SceneCandidates,
    SceneGroundTruth,
    ScenePose,
    SupervisionTargets,
    compute_graspness,
    cull_collisions,
    project_annotations,
    render_supervision,
)
from .simplify import SimplifiedAnnotation, compression_stats, simplify

__version__ = "0.1.0"

__all__ = [
    "AnnotationTensor",
    "APReport",
    "AttentionWeights",
    "CameraIntrinsics",
    "DEFAULT_MU_GRID",
    "DepthMap",
    "GraspPose",
    "GripperModel",
    "InvariantViolation",
    "LocalFeature",
    "MemoryBank",
    "NoiseModel",
    "ObjectModel",
    "PipelineConfig",
    "PointCloud",
    "PredictionSet",
    "ResidualMap",
    "RigidTransform",
    "SceneCandidates",
    "SceneGroundTruth",
    "ScenePose",
    "SimplifiedAnnotation",
    "SupervisionTargets",
    "ViewSphere",
    "adjust_width",
    "annotate_object",
    "apply_overrides",
    "apply_repair",
    "average_precision",
    "bank_update",
    "compression_stats",
    "compute_graspness",
    "corrupt",
    "cull_collisions",
    "enhance",
    "estimate_normals",
    "extract_descriptor",
    "grasp_success_at",
    "init_bank",
    "judge_grasp",
    "load_config",
    "make_residual_label",
    "project_annotations",
    "propose_grasps",
    "render_supervision",
    "rmse",
    "sample_grasp_points",
    "sample_view_sphere",
    "save_config",
    "score_grasp",
    "simplify",
    "smoothing_repairer",
    "voxel_downsample",
]
