"""Pipeline configuration: one dataclass, TOML persistence, flag overrides.

The emitted file groups keys into sections; floats are written with repr so
a load/save/load cycle reproduces the exact same values. Unknown keys are
rejected on load to catch typos early.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .annotate import DEFAULT_MU_GRID
from .depth_repair import NoiseModel
from .geometry import GripperModel
from .scene import DEFAULT_HEATMAP_TAU, DEFAULT_MASK_TAU


@dataclass
class PipelineConfig:
    """Every knob of the pipeline with its default.

    The capacity block records point/feature budgets a downstream learned
    detector would consume; the commands here only carry them through.
    """

    # Candidate grid
    views: int = 300
    grasp_voxel: float = 0.01
    mu_grid: tuple = DEFAULT_MU_GRID
    view_limit: int = 60
    gripper: GripperModel = field(default_factory=GripperModel)
    # Scene supervision
    heatmap_tau: float = DEFAULT_HEATMAP_TAU
    mask_tau: float = DEFAULT_MASK_TAU
    # Local features and memory bank
    cylinder_radius: float = 0.03
    cylinder_height: float = 0.04
    bank_size: int = 120
    momentum: float = 0.999
    feature_dim: int = 256
    attention_dim: int = 256
    attention_heads: int = 4
    # Depth noise
    noise: NoiseModel = field(default_factory=NoiseModel)
    # Evaluation
    top_k: int = 50
    top_m: int = 50
    # Capacity constants for downstream detector integration
    scene_points: int = 20000
    sample_points: int = 1024
    backbone_dim: int = 512
    group_size: int = 16
    # Root seed; stage seeds derive from it
    seed: int = 0

    def __post_init__(self):
        mu = np.asarray(self.mu_grid, dtype=np.float64)
        if mu.ndim != 1 or mu.size == 0 or np.any(mu <= 0) or np.any(np.diff(mu) <= 0):
            raise ValueError("mu_grid must be positive and strictly increasing")
        self.mu_grid = tuple(float(m) for m in mu)
        if self.views < 1:
            raise ValueError("views must be >= 1")
        if self.grasp_voxel <= 0:
            raise ValueError("grasp_voxel must be positive")
        for name in ("view_limit", "bank_size", "feature_dim", "attention_dim",
                     "attention_heads", "top_k", "top_m", "scene_points",
                     "sample_points", "backbone_dim", "group_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("heatmap_tau", "mask_tau", "cylinder_radius",
                     "cylinder_height"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.attention_dim % self.attention_heads:
            raise ValueError("attention_dim must divide evenly into heads")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


# Section -> ordered field names; gripper and noise map onto sub-dataclasses.
_SECTIONS = (
    ("annotation", ("views", "grasp_voxel", "mu_grid", "view_limit")),
    ("gripper", ("max_width", "finger_length", "finger_thickness",
                 "base_depth", "depth_grid", "angle_count")),
    ("scene", ("heatmap_tau", "mask_tau")),
    ("enhancer", ("cylinder_radius", "cylinder_height", "bank_size",
                  "momentum", "feature_dim", "attention_dim",
                  "attention_heads")),
    ("noise", ("sigma0", "depth_gain", "edge_band", "edge_sigma",
               "hole_rate", "seed")),
    ("evaluation", ("top_k", "top_m")),
    ("capacity", ("scene_points", "sample_points", "backbone_dim",
                  "group_size")),
    ("run", ("seed",)),
)


def _toml_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        r = repr(float(v))
        return r if ("." in r or "e" in r) else r + ".0"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise TypeError(f"cannot emit {type(v).__name__} to TOML")


def _section_source(cfg: PipelineConfig, section: str):
    if section == "gripper":
        return cfg.gripper
    if section == "noise":
        return cfg.noise
    return cfg


def save_config(path, cfg: PipelineConfig) -> None:
    lines = []
    for section, keys in _SECTIONS:
        src = _section_source(cfg, section)
        lines.append(f"[{section}]")
        for key in keys:
            val = getattr(src, key)
            if key == "depth_grid" or key == "mu_grid":
                val = list(val)
            lines.append(f"{key} = {_toml_scalar(val)}")
        lines.append("")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines))


def load_config(path) -> PipelineConfig:
    """Parse a TOML config; absent keys keep defaults, unknown keys fail."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    known = {section: keys for section, keys in _SECTIONS}
    top: dict = {}
    gripper: dict = {}
    noise: dict = {}
    for section, table in data.items():
        if section not in known:
            raise ValueError(f"unknown config section {section!r}")
        if not isinstance(table, dict):
            raise ValueError(f"config section {section!r} must be a table")
        for key, val in table.items():
            if key not in known[section]:
                raise ValueError(f"unknown config key {section}.{key}")
            if section == "gripper":
                gripper[key] = tuple(val) if key == "depth_grid" else val
            elif section == "noise":
                noise[key] = val
            else:
                top[key] = tuple(val) if key == "mu_grid" else val
    if gripper:
        top["gripper"] = GripperModel(**gripper)
    if noise:
        top["noise"] = NoiseModel(**noise)
    return PipelineConfig(**top)


def apply_overrides(cfg: PipelineConfig, **overrides) -> PipelineConfig:
    """New config with the given fields replaced; validation re-runs."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    if not changes:
        return cfg
    return replace(cfg, **changes)
