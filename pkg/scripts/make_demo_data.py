#!/usr/bin/env python3
"""Build a self-contained demo workspace by driving the pipeline CLI.

Generates a box-shell object cloud, grades its candidate grid, assembles a
tabletop scene bundle, corrupts and repairs the rendered depth, fits a small
feature bank, proposes grasps, and scores them. Every artifact lands under
--output and the whole run is deterministic for a fixed seed.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from graspkit.cli import main as cli
from graspkit.geometry import PointCloud
from graspkit.ply_io import save_ply

CONFIG = """\
[annotation]
views = {views}
grasp_voxel = 0.015

[scene]
heatmap_tau = 0.01

[evaluation]
top_k = 10
top_m = 12
"""


def box_cloud(half=0.015, spacing=0.003):
    """Axis-aligned box shell with outward face normals."""
    ax = np.arange(-half, half + spacing / 2, spacing)
    grid = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    pts, nrm = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            face = np.zeros((grid.shape[0], 3))
            face[:, axis] = sign * half
            others = [a for a in range(3) if a != axis]
            face[:, others[0]] = grid[:, 0]
            face[:, others[1]] = grid[:, 1]
            normal = np.zeros(3)
            normal[axis] = sign
            pts.append(face)
            nrm.append(np.tile(normal, (grid.shape[0], 1)))
    return PointCloud(np.concatenate(pts), np.concatenate(nrm))


def scene_description(ply, annotation):
    return {
        "scene_id": "demo-scene",
        "objects": [
            {
                "object_id": "box",
                "surface": str(ply),
                "annotation": str(annotation),
                "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1],
                "translation": [0.0, 0.0, 0.015],
            }
        ],
        "camera": {
            "intrinsics": {
                "fx": 120.0,
                "fy": 120.0,
                "cx": 64.0,
                "cy": 48.0,
                "width": 128,
                "height": 96,
            },
            "extrinsics": {
                "rotation": [1, 0, 0, 0, -1, 0, 0, 0, -1],
                "translation": [0.0, 0.0, 0.6],
            },
        },
        "table": {"size": [0.12, 0.12], "spacing": 0.004, "z": 0.0},
    }


def step(argv):
    code = cli([str(a) for a in argv])
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--output", default="demo", help="workspace directory")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--views", type=int, default=12,
                        help="approach directions for the demo annotation")
    args = parser.parse_args()

    root = Path(args.output)
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "pipeline.toml"
    cfg.write_text(CONFIG.format(views=args.views), encoding="utf-8")
    ply = root / "box.ply"
    save_ply(ply, box_cloud())

    common = ["--config", cfg, "--seed", args.seed]
    step(["annotate", ply, "--object-id", "box",
          "--output", root / "box.gann", *common])

    scene_json = root / "scene.json"
    scene_json.write_text(
        json.dumps(scene_description(ply, root / "box.gann"), indent=2),
        encoding="utf-8",
    )
    step(["scene", scene_json, "--output", root / "bundle", *common])
    step(["simplify", root / "bundle" / "object_0.gann",
          "--view-limit", 6, "--output", root / "simplified.gann", *common])
    step(["corrupt", root / "bundle" / "depth.raw",
          "--output", root / "noisy.raw", *common])
    step(["repair", root / "noisy.raw", "--predictor", "oracle",
          "--sim", root / "bundle" / "depth.raw",
          "--output", root / "repaired.raw", *common])
    step(["bank", ply, "--output", root / "bank.gkbank", *common])
    step(["propose", root / "bundle", "--bank", root / "bank.gkbank",
          "--output", root / "predictions.csv", *common])
    step(["eval", root / "predictions.csv", root / "bundle",
          "--output", root / "report.json", *common])
    print(f"demo workspace ready under {root}/")


if __name__ == "__main__":
    main()
