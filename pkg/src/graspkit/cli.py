"""Command-line pipeline driver.

Subcommands: annotate, scene, simplify, corrupt, repair, bank, propose, eval.
Every command accepts --config/--seed/--output, prints a single-line JSON
summary to stdout, and exits 0 on success, 2 on input errors, 3 on invariant
violations. All artifacts are deterministic for a fixed (config, seed), so
re-runs are byte-identical; wall-clock timings appear only in the summary.
"""

from __future__ import annotations

import argparse
import json
import logging
import time
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import gann
from .annotate import ObjectModel, annotate_object, sample_grasp_points
from .annotate import AnnotationTensor
from .config import PipelineConfig, apply_overrides, load_config
from .depth_repair import DepthMap, apply_repair, corrupt, make_residual_label, rmse, smoothing_repairer
from .enhance import bank_update, extract_descriptor, init_bank, random_attention_weights
from .errors import InvariantViolation
from .evaluate import (
    aggregate_reports,
    average_precision,
    graspness_for_cloud,
    load_predictions,
    propose_grasps,
    save_predictions,
    save_report_csv,
    save_report_json,
)
from .geometry import CameraIntrinsics, PointCloud, RigidTransform, estimate_normals
from .image_io import save_depth_pgm, save_depth_raw, save_heatmap_pgm, load_depth_raw
from .ply_io import load_ply, save_ply
from .scene import (
    SceneGroundTruth,
    ScenePose,
    compute_graspness,
    cull_collisions,
    make_table_cloud,
    parse_scene_description,
    project_annotations,
    render_supervision,
    synthesize_depth,
    unproject_depth,
)
from .simplify import compression_stats, simplify

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3


def stage_seed(root: int, label: str) -> int:
    """Deterministic per-stage seed derived from the root seed and a label."""
    mix = zlib.crc32(label.encode("utf-8"))
    return int(np.random.SeedSequence([int(root), mix]).generate_state(1)[0])


def _native(obj):
    """Recursively convert numpy scalars/arrays for json.dumps."""
    if isinstance(obj, dict):
        return {k: _native(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_native(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _native(obj.tolist())
    return obj


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = apply_overrides(cfg, seed=args.seed)
    return cfg


def _resolve(base: Path, ref: str) -> str:
    p = Path(ref)
    return str(p if p.is_absolute() else base / p)


def _require_normals(cloud: PointCloud, what: str) -> PointCloud:
    if cloud.normals is None:
        raise ValueError(f"{what} must carry nx, ny, nz normals")
    return cloud


def cmd_annotate(args) -> dict:
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    gripper = cfg.gripper
    if args.angles is not None:
        gripper = replace(gripper, angle_count=args.angles)
    if args.depths is not None:
        if not 1 <= args.depths <= len(gripper.depth_grid):
            raise ValueError(
                f"--depths must lie in 1..{len(gripper.depth_grid)}"
            )
        gripper = replace(gripper, depth_grid=gripper.depth_grid[: args.depths])
    cfg = apply_overrides(cfg, views=args.views, gripper=gripper)

    cloud = _require_normals(load_ply(args.input), "input PLY")
    obj = ObjectModel(args.object_id or Path(args.input).stem, cloud)
    ann = annotate_object(obj, cfg)
    out = args.output or str(Path(args.input).with_suffix(".gann"))
    gann.save_any(out, ann)
    return {
        "command": "annotate",
        "object_id": obj.id,
        "grasp_points": int(ann.grasp_points.shape[0]),
        "candidates_per_point": ann.candidates_per_point,
        "positives": ann.positive_count(),
        "output": out,
        "seed": cfg.seed,
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }


def _save_bundle(out_dir: Path, scene: SceneGroundTruth, depth: DepthMap,
                 targets) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, ((obj, pose), sc) in enumerate(zip(scene.objects, scene.annotations)):
        ply_name = f"object_{i}.ply"
        gann_name = f"object_{i}.gann"
        save_ply(out_dir / ply_name, obj.surface)
        gann.save_any(str(out_dir / gann_name), sc)
        entries.append(
            {
                "object_id": obj.id,
                "surface": ply_name,
                "candidates": gann_name,
                "rotation": [float(x) for x in pose.rotation.reshape(-1)],
                "translation": [float(x) for x in pose.translation],
            }
        )
    save_heatmap_pgm(out_dir / "heatmap.pgm", targets.graspness_heatmap)
    save_heatmap_pgm(
        out_dir / "object_mask.pgm", targets.object_mask.astype(np.float64)
    )
    save_depth_raw(out_dir / "depth.raw", depth.values, depth.intrinsics)
    save_depth_pgm(out_dir / "depth.pgm", depth.values)
    ids, g_list, vg_list = [], [], []
    for sc in scene.annotations:
        g, vg = compute_graspness(sc)
        ids.append(sc.object_id)
        g_list.append(g)
        vg_list.append(vg)
    gann.save_graspness(str(out_dir / "graspness.bin"), ids, g_list, vg_list)

    intr = scene.camera_intrinsics
    manifest = {
        "scene_id": scene.scene_id,
        "objects": entries,
        "camera": {
            "intrinsics": {
                "fx": intr.fx,
                "fy": intr.fy,
                "cx": intr.cx,
                "cy": intr.cy,
                "width": intr.width,
                "height": intr.height,
            },
            "rotation": [float(x) for x in scene.camera_pose.rotation.reshape(-1)],
            "translation": [float(x) for x in scene.camera_pose.translation],
        },
        "files": {
            "heatmap": "heatmap.pgm",
            "object_mask": "object_mask.pgm",
            "depth_raw": "depth.raw",
            "depth_pgm": "depth.pgm",
            "graspness": "graspness.bin",
        },
    }
    if scene.table is not None:
        save_ply(out_dir / "table.ply", scene.table)
        manifest["table"] = "table.ply"
    text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    (out_dir / "bundle.json").write_text(text, encoding="utf-8")
    return manifest


def load_bundle(bundle_dir):
    """Rebuild (SceneGroundTruth, DepthMap, manifest) from a scene bundle."""
    bundle_dir = Path(bundle_dir)
    manifest = json.loads((bundle_dir / "bundle.json").read_text(encoding="utf-8"))
    objects, anns = [], []
    for entry in manifest["objects"]:
        surface = load_ply(bundle_dir / entry["surface"])
        sc = gann.load_annotation(str(bundle_dir / entry["candidates"]))
        pose = ScenePose(
            entry["object_id"],
            np.asarray(entry["rotation"], dtype=np.float64).reshape(3, 3),
            np.asarray(entry["translation"], dtype=np.float64),
        )
        objects.append((ObjectModel(entry["object_id"], surface), pose))
        anns.append(sc)
    cam = manifest["camera"]
    intr = CameraIntrinsics(**cam["intrinsics"])
    cam_pose = RigidTransform(
        np.asarray(cam["rotation"], dtype=np.float64).reshape(3, 3),
        np.asarray(cam["translation"], dtype=np.float64),
    )
    table = None
    if "table" in manifest:
        table = load_ply(bundle_dir / manifest["table"])
    scene = SceneGroundTruth(manifest["scene_id"], objects, anns, intr, cam_pose, table)
    vals, d_intr = load_depth_raw(bundle_dir / manifest["files"]["depth_raw"])
    return scene, DepthMap(vals, d_intr), manifest


def cmd_scene(args) -> dict:
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    desc = parse_scene_description(args.input)
    base = Path(args.input).parent
    objects, annotations = [], {}
    for entry in desc["objects"]:
        surface = _require_normals(
            load_ply(_resolve(base, entry["surface"])), "object surface PLY"
        )
        ann = gann.load_annotation(_resolve(base, entry["annotation"]))
        if not isinstance(ann, AnnotationTensor):
            raise ValueError(
                "scene assembly expects object-frame annotation files"
            )
        pose = ScenePose(
            entry["object_id"],
            np.asarray(entry["rotation"], dtype=np.float64).reshape(3, 3),
            np.asarray(entry["translation"], dtype=np.float64),
        )
        objects.append((ObjectModel(entry["object_id"], surface), pose))
        annotations[entry["object_id"]] = ann
    table = None
    if "table" in desc:
        tb = desc["table"]
        table = make_table_cloud(
            tb["size"][0], tb["size"][1], tb["spacing"], tb.get("z", 0.0)
        )
    cam = desc["camera"]
    intr = CameraIntrinsics(**cam["intrinsics"])
    ext = cam["extrinsics"]
    cam_pose = RigidTransform(
        np.asarray(ext["rotation"], dtype=np.float64).reshape(3, 3),
        np.asarray(ext["translation"], dtype=np.float64),
    )

    projected = project_annotations(objects, annotations)
    staging = SceneGroundTruth(
        desc["scene_id"], objects, projected, intr, cam_pose, table
    )
    culled = [cull_collisions(sc, staging.scene_cloud()) for sc in projected]
    scene = SceneGroundTruth(desc["scene_id"], objects, culled, intr, cam_pose, table)
    depth = synthesize_depth(scene)
    targets = render_supervision(scene, depth, cfg.heatmap_tau, cfg.mask_tau)
    out_dir = Path(args.output or f"{Path(args.input).stem}_bundle")
    _save_bundle(out_dir, scene, depth, targets)

    total = sum(sc.scores.size for sc in culled)
    positives = sum(int(np.count_nonzero(sc.scores > 0)) for sc in culled)
    culled_n = sum(int(np.count_nonzero(sc.collided)) for sc in culled)
    return {
        "command": "scene",
        "scene_id": desc["scene_id"],
        "objects": len(objects),
        "candidates": int(total),
        "positives": positives,
        "collided": culled_n,
        "mask_pixels": int(np.count_nonzero(targets.object_mask)),
        "output": str(out_dir),
        "seed": cfg.seed,
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }


def cmd_simplify(args) -> dict:
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    ann = gann.load_annotation(args.input)
    if isinstance(ann, AnnotationTensor):
        raise ValueError(
            "simplify expects a scene-level candidate file; run the scene "
            "command first"
        )
    limit = args.view_limit if args.view_limit is not None else cfg.view_limit
    simp = simplify(ann, view_limit=limit)
    out = args.output or str(
        Path(args.input).with_name(Path(args.input).stem + "_simplified.gann")
    )
    gann.save_any(out, simp)
    stats = compression_stats(ann, simp)
    return {
        "command": "simplify",
        "retained_points": int(simp.retained_points.shape[0]),
        "views_kept": int(simp.retained_views.shape[1]) if simp.retained_views.size else 0,
        **stats,
        "output": out,
        "seed": cfg.seed,
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }


def cmd_corrupt(args) -> dict:
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    vals, intr = load_depth_raw(args.input)
    seed = stage_seed(cfg.seed, "corrupt")
    model = replace(cfg.noise, seed=seed)
    noisy = corrupt(DepthMap(vals, intr), model)
    out = args.output or str(
        Path(args.input).with_name(Path(args.input).stem + "_noisy.raw")
    )
    save_depth_raw(out, noisy.values, intr)
    save_depth_pgm(Path(out).with_suffix(".pgm"), noisy.values)
    return {
        "command": "corrupt",
        "valid_before": int(np.count_nonzero(vals)),
        "valid_after": int(np.count_nonzero(noisy.values)),
        "sigma0_mm": model.sigma0,
        "hole_rate": model.hole_rate,
        "stage_seed": seed,
        "output": out,
        "seed": cfg.seed,
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }


def cmd_repair(args) -> dict:
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    real = DepthMap(*load_depth_raw(args.input))
    sim = DepthMap(*load_depth_raw(args.sim)) if args.sim else None
    if args.predictor == "oracle":
        if sim is None:
            raise ValueError("the oracle predictor needs --sim")
        residual = make_residual_label(sim, real)
    else:
        residual = smoothing_repairer(real)
    repaired = apply_repair(real, residual)
    out = args.output or str(
        Path(args.input).with_name(Path(args.input).stem + "_repaired.raw")
    )
    save_depth_raw(out, repaired.values, real.intrinsics)
    save_depth_pgm(Path(out).with_suffix(".pgm"), repaired.values)
    summary = {
        "command": "repair",
        "predictor": args.predictor,
        "repaired_pixels": int(np.count_nonzero(residual.valid_mask)),
        "output": out,
        "seed": cfg.seed,
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }
    if sim is not None:
        summary["rmse_before_mm"] = rmse(real, sim)
        summary["rmse_after_mm"] = rmse(repaired, sim)
    return summary


def _descriptors_from_ply(path: str, cfg: PipelineConfig) -> list:
    cloud = _require_normals(load_ply(path), "feature source PLY")
    obj = ObjectModel(Path(path).stem, cloud)
    pts = sample_grasp_points(obj, cfg.grasp_voxel)
    _, idx = cKDTree(cloud.points).query(pts)
    feats = []
    for pi in np.atleast_1d(idx):
        feats.append(
            extract_descriptor(
                cloud,
                cloud.points[pi],
                -cloud.normals[pi],
                cfg.gripper,
                cfg.cylinder_radius,
                cfg.cylinder_height,
                dim=cfg.feature_dim,
            )
        )
    return feats


def cmd_bank(args) -> dict:
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    seed = stage_seed(cfg.seed, "bank-init")
    if args.bank:
        bank = gann.load_bank(args.bank)
    else:
        bank = init_bank(cfg.bank_size, cfg.feature_dim, cfg.momentum, seed)
    batches = 0
    for path in args.inputs:
        if path.endswith(".ply"):
            feats = _descriptors_from_ply(path, cfg)
        else:
            feats = gann.load_features(path)
        if feats:
            bank = bank_update(bank, feats)
            batches += 1
    out = args.output or "bank.gkbank"
    gann.save_bank(out, bank)
    return {
        "command": "bank",
        "batches": batches,
        "bank_size": bank.size,
        "dim": bank.dim,
        "update_count": bank.update_count,
        "skipped_features": bank.skipped_count,
        "stage_seed": seed,
        "output": out,
        "seed": cfg.seed,
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }


def cmd_propose(args) -> dict:
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    scene, bundle_depth, _ = load_bundle(args.bundle)
    if args.cloud:
        cloud = load_ply(args.cloud)
    else:
        depth = DepthMap(*load_depth_raw(args.depth)) if args.depth else bundle_depth
        pts, _ = unproject_depth(depth, scene.camera_pose)
        if pts.shape[0] == 0:
            raise ValueError("depth map has no valid pixels to unproject")
        cloud = PointCloud(pts)
    if cloud.normals is None:
        cloud = estimate_normals(
            cloud, viewpoint=scene.camera_pose.translation
        )
    graspness = graspness_for_cloud(cloud, scene, cfg.heatmap_tau)
    bank = gann.load_bank(args.bank) if args.bank else None
    weights = None
    if bank is not None:
        weights = random_attention_weights(
            bank.dim,
            cfg.attention_dim,
            cfg.attention_heads,
            stage_seed(cfg.seed, "attention"),
        )
    preds = propose_grasps(
        cloud,
        graspness,
        cfg.top_m,
        cfg.gripper,
        scene.scene_id,
        bank,
        weights,
    )
    out = args.output or f"{scene.scene_id}_predictions.csv"
    save_predictions(out, preds)
    return {
        "command": "propose",
        "scene_id": scene.scene_id,
        "cloud_points": len(cloud),
        "graspable_points": int(np.count_nonzero(graspness > 0)),
        "proposals": len(preds),
        "enhanced": bank is not None,
        "output": out,
        "seed": cfg.seed,
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }


def cmd_eval(args) -> dict:
    t0 = time.perf_counter()
    cfg = _load_cfg(args)
    pred_sets = {ps.scene_id: ps for ps in load_predictions(args.predictions)}
    reports = []
    for bundle_dir in args.bundles:
        scene, _, _ = load_bundle(bundle_dir)
        ps = pred_sets.get(scene.scene_id)
        if ps is None:
            raise ValueError(
                f"prediction file has no rows for scene {scene.scene_id!r}"
            )
        reports.append(
            average_precision(ps, scene, cfg.mu_grid, cfg.top_k, cfg.gripper)
        )
    report = reports[0] if len(reports) == 1 else aggregate_reports(reports)
    out = args.output or "report.json"
    save_report_json(out, report)
    csv_out = str(Path(out).with_suffix(".csv"))
    save_report_csv(csv_out, report)
    summary = {
        "command": "eval",
        "scenes": len(reports),
        "ap": report.ap,
        "output": out,
        "output_csv": csv_out,
        "seed": cfg.seed,
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }
    for mu, val in sorted(report.ap_per_mu.items()):
        summary[f"ap_{mu:g}"] = val
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graspkit",
        description="Grasp annotation, depth repair, and evaluation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("--seed", type=int, help="root seed (overrides config)")
        sp.add_argument("--output", help="output path")

    sp = sub.add_parser("annotate", help="grade the candidate grid of an object PLY")
    sp.add_argument("input", help="object surface PLY with normals")
    sp.add_argument("--object-id", help="id stored in the annotation (default: file stem)")
    sp.add_argument("--views", type=int, help="approach directions to sample")
    sp.add_argument("--angles", type=int, help="in-plane angles per view")
    sp.add_argument("--depths", type=int, help="use the first N configured depths")
    common(sp)
    sp.set_defaults(func=cmd_annotate)

    sp = sub.add_parser("scene", help="assemble a scene bundle from a description JSON")
    sp.add_argument("input", help="scene description JSON")
    common(sp)
    sp.set_defaults(func=cmd_scene)

    sp = sub.add_parser("simplify", help="drop barren points and low-yield views")
    sp.add_argument("input", help="scene-level candidate file")
    sp.add_argument("--view-limit", type=int, help="views kept per point")
    common(sp)
    sp.set_defaults(func=cmd_simplify)

    sp = sub.add_parser("corrupt", help="add synthetic sensor noise to a depth map")
    sp.add_argument("input", help="raw float32 depth file (with JSON sidecar)")
    common(sp)
    sp.set_defaults(func=cmd_corrupt)

    sp = sub.add_parser("repair", help="repair a depth map with a residual predictor")
    sp.add_argument("input", help="raw float32 depth file to repair")
    sp.add_argument("--predictor", choices=("oracle", "smoothing"), default="smoothing")
    sp.add_argument("--sim", help="clean reference depth (required for oracle)")
    common(sp)
    sp.set_defaults(func=cmd_repair)

    sp = sub.add_parser("bank", help="initialize or update a feature memory bank")
    sp.add_argument("inputs", nargs="*", help="feature files or PLYs, one batch each")
    sp.add_argument("--bank", help="existing checkpoint to continue from")
    common(sp)
    sp.set_defaults(func=cmd_bank)

    sp = sub.add_parser("propose", help="propose grasps on a cloud or depth map")
    sp.add_argument("bundle", help="scene bundle directory (ground-truth graspness)")
    sp.add_argument("--cloud", help="PLY cloud to propose on (default: bundle depth)")
    sp.add_argument("--depth", help="raw depth file to unproject instead")
    sp.add_argument("--bank", help="bank checkpoint for descriptor re-weighting")
    common(sp)
    sp.set_defaults(func=cmd_propose)

    sp = sub.add_parser("eval", help="score predictions against scene ground truth")
    sp.add_argument("predictions", help="prediction CSV")
    sp.add_argument("bundles", nargs="+", help="scene bundle directories")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        summary = args.func(args)
    except InvariantViolation as exc:
        print(json.dumps({
            "command": args.command,
            "error": str(exc),
            "error_code": "invariant-violation",
        }, sort_keys=True))
        return EXIT_INVARIANT
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(json.dumps({
            "command": args.command,
            "error": str(exc),
            "error_code": "input-error",
        }, sort_keys=True))
        return EXIT_INPUT
    print(json.dumps(_native(summary), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    import sys

    sys.exit(main())
