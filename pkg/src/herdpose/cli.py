"""Batch front door: composes the library into reproducible workflows.

Every subcommand writes a run manifest (config, seed, input digests, tool
version) beside its outputs, so a run can be reproduced byte-for-byte from
the recorded configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .augment import AugmentConfig, augment_dataset
from .errors import ConfigurationError, ConsistencyError
from .geometry import Intrinsics
from .keypoints import SchemaMapping, annotate_frame, default_mapping, filtered_eval_slots
from .layout import GroundBounds, generate_scene, load_scene, save_scene
from .manifests import (
    DatasetManifest,
    ImageEntry,
    canonical_json,
    convert_yolo,
    load_coco,
    merge,
    save_coco,
    split_by_video,
    write_cdf_csv,
)
from .metrics import (
    IOU_THRESHOLDS,
    DatasetResult,
    aggregate,
    evaluate_detections,
    evaluate_pose,
    format_table,
    load_detection_results,
    load_keypoint_results,
)
from .quadruped import build_pose_library
from .render import RenderedFrame, load_mask_png, rasterize, save_depth_grid, save_mask_png


def _default_jobs() -> int:
    try:
        return max(int(os.environ.get("HERDPOSE_JOBS", "1")), 1)
    except ValueError:
        return 1


def _log(args, **event) -> None:
    if getattr(args, "verbose", False):
        print(json.dumps(event, sort_keys=True), file=sys.stderr)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_run_manifest(anchor: Path, args, inputs: list[Path]) -> None:
    """Record config + seed + input digests beside an output file or directory."""
    config = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
        if k not in ("func",) and not callable(v)
    }
    manifest = {
        "tool": "herdpose",
        "version": __version__,
        "subcommand": args.subcommand,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
    }
    path = anchor / "run_manifest.json" if anchor.is_dir() else anchor.with_name(anchor.name + ".run.json")
    path.write_text(canonical_json(manifest), encoding="utf-8")


def _cmd_scene_gen(args) -> int:
    library = build_pose_library(n_poses=args.poses, seed=args.pose_seed)
    cx = args.cx if args.cx is not None else args.width / 2.0
    cy = args.cy if args.cy is not None else args.height / 2.0
    scene = generate_scene(
        library,
        n_instances=args.n_instances,
        bounds=GroundBounds(*args.bounds),
        k_cameras=args.cameras,
        scale_range=tuple(args.scale),
        distance_range=tuple(args.distance),
        elevation_range_deg=tuple(args.elevation),
        intrinsics=Intrinsics(args.fx, args.fy, cx, cy, args.width, args.height),
        seed=args.seed,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scene(scene, out)
    _write_run_manifest(out, args, inputs=[])
    _log(args, event="scene-gen", instances=len(scene.instances), cameras=len(scene.cameras))
    return 0


def _cmd_render(args) -> int:
    scene = load_scene(args.scene)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def render_one(index_cam):
        index, cam = index_cam
        return index, rasterize(scene, cam, image_id=index + 1)

    tasks = list(enumerate(scene.cameras))
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rendered = sorted(pool.map(render_one, tasks))
    else:
        rendered = [render_one(t) for t in tasks]

    frames = []
    for index, frame in rendered:
        mask_name = f"mask_{frame.image_id:06d}.png"
        depth_name = f"depth_{frame.image_id:06d}.bin"
        save_mask_png(frame.mask, out_dir / mask_name)
        save_depth_grid(frame.depth, out_dir / depth_name)
        frames.append(
            {
                "image_id": frame.image_id,
                "camera_index": index,
                "width": frame.width,
                "height": frame.height,
                "mask": mask_name,
                "depth": depth_name,
            }
        )
    (out_dir / "frames.json").write_text(canonical_json({"frames": frames}), encoding="utf-8")
    _write_run_manifest(out_dir, args, inputs=[Path(args.scene)])
    _log(args, event="render", frames=len(frames))
    return 0


def _cmd_annotate(args) -> int:
    scene = load_scene(args.scene)
    render_dir = Path(args.render_dir)
    index = json.loads((render_dir / "frames.json").read_text(encoding="utf-8"))
    video_id = args.video_id if args.video_id is not None else Path(args.scene).stem

    images, annotations = [], []
    for frame_info in sorted(index["frames"], key=lambda f: f["image_id"]):
        mask = load_mask_png(render_dir / frame_info["mask"])
        frame = RenderedFrame(image_id=int(frame_info["image_id"]), mask=mask)
        cam = scene.cameras[int(frame_info["camera_index"])]
        records = annotate_frame(scene, cam, frame, min_dim=args.min_dim)
        images.append(
            ImageEntry(
                image_id=frame.image_id,
                file_name=f"image_{frame.image_id:06d}.png",
                width=frame.width,
                height=frame.height,
                video_id=video_id,
                mask_path=frame_info["mask"],
            )
        )
        annotations.extend(records)

    manifest = DatasetManifest(name=args.name, images=images, annotations=annotations)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_coco(manifest, out)
    _write_run_manifest(out, args, inputs=[Path(args.scene), render_dir / "frames.json"])
    _log(args, event="annotate", images=len(images), annotations=len(annotations))
    return 0


def _cmd_augment(args) -> int:
    manifest = load_coco(args.manifest)
    masks_dir = Path(args.masks_dir)

    def mask_for(entry):
        if entry.mask_path is None:
            raise ConsistencyError(f"image {entry.image_id} has no mask_path")
        return load_mask_png(masks_dir / entry.mask_path)

    cfg = AugmentConfig(
        area_threshold=args.area_threshold,
        max_offset=args.max_offset,
        output_size=tuple(args.output_size),
        min_visible_pixels=args.min_visible,
        seed=args.seed,
    )
    augmented, new_masks = augment_dataset(manifest, mask_for, cfg, jobs=args.jobs)

    out_masks_dir = Path(args.out_masks_dir)
    out_masks_dir.mkdir(parents=True, exist_ok=True)
    for entry in augmented.images:
        if entry.image_id in new_masks:
            mask_name = f"mask_{entry.image_id:06d}.png"
            save_mask_png(new_masks[entry.image_id], out_masks_dir / mask_name)
            entry.mask_path = mask_name
    if args.name is not None:
        augmented.name = args.name

    out = Path(args.out_manifest)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_coco(augmented, out)
    _write_run_manifest(out, args, inputs=[Path(args.manifest)])
    _log(args, event="augment", crops=len(new_masks), images=augmented.image_count)
    return 0


def _cmd_split(args) -> int:
    manifest = load_coco(args.manifest)
    train, val = split_by_video(
        manifest, ratio=args.ratio, seed=args.seed, largest_first=args.largest_first
    )
    for out_path, part in ((args.out_train, train), (args.out_val, val)):
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_coco(part, out)
        _write_run_manifest(out, args, inputs=[Path(args.manifest)])
    _log(args, event="split", train=train.image_count, val=val.image_count)
    return 0


def _cmd_convert(args) -> int:
    manifest = load_coco(args.manifest)
    out_dir = Path(args.out_dir)
    written = convert_yolo(manifest, out_dir)
    _write_run_manifest(out_dir, args, inputs=[Path(args.manifest)])
    _log(args, event="convert", labels=len(written))
    return 0


def _cmd_merge(args) -> int:
    manifests = [load_coco(p) for p in args.manifests]
    mapping = None
    if args.mapping == "default":
        mapping = default_mapping()
    elif args.mapping is not None:
        mapping = SchemaMapping.load(args.mapping)
    merged = merge(manifests, mapping=mapping)
    if args.name is not None:
        merged.name = args.name
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_coco(merged, out)
    _write_run_manifest(out, args, inputs=[Path(p) for p in args.manifests])
    _log(args, event="merge", images=merged.image_count)
    return 0


def _eval_pairs(args) -> list[tuple[Path, Path]]:
    if len(args.gt) != len(args.results):
        raise ConfigurationError(
            f"need one --results per --gt, got {len(args.gt)} and {len(args.results)}"
        )
    return list(zip(map(Path, args.gt), map(Path, args.results)))


def _finish_report(args, results: list[DatasetResult], inputs: list[Path]) -> int:
    report = aggregate(results)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json(), encoding="utf-8")
    _write_run_manifest(out, args, inputs=inputs)
    print(format_table(report), end="")
    return 0


def _tagged(name: str, args) -> str:
    tag = getattr(args, "tag", None)
    return f"{name}@{tag}" if tag else name


def _cmd_eval_det(args) -> int:
    thresholds = tuple(args.iou) if args.iou else IOU_THRESHOLDS
    results = []
    inputs = []
    for gt_path, det_path in _eval_pairs(args):
        manifest = load_coco(gt_path)
        dets = load_detection_results(det_path)
        values = evaluate_detections(dets, manifest, thresholds)
        results.append(DatasetResult(_tagged(manifest.name, args), manifest.image_count, values))
        inputs.extend((gt_path, det_path))
    return _finish_report(args, results, inputs)


def _cmd_eval_pose(args) -> int:
    results = []
    inputs = []
    for gt_path, pred_path in _eval_pairs(args):
        manifest = load_coco(gt_path)
        preds = load_keypoint_results(pred_path, manifest)
        eval_slots = filtered_eval_slots(manifest.schema) if args.filtered else None
        values = evaluate_pose(
            preds,
            manifest,
            alphas=tuple(args.alpha),
            eval_slots=eval_slots,
            visible_only=args.visible_only,
        )
        results.append(DatasetResult(_tagged(manifest.name, args), manifest.image_count, values))
        inputs.extend((gt_path, pred_path))
    return _finish_report(args, results, inputs)


def _cmd_stats(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path in args.manifest:
        manifest = load_coco(path)
        if args.cdf:
            csv_path = out_dir / f"{manifest.name}_cdf.csv"
            write_cdf_csv(manifest, csv_path)
            written.append(csv_path)
    _write_run_manifest(out_dir, args, inputs=[Path(p) for p in args.manifest])
    _log(args, event="stats", files=[str(p) for p in written])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="herdpose",
        description="Synthetic herd-scene dataset tooling: generation, augmentation, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"herdpose {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name: str, func, help_text: str, jobs: bool = False):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--verbose", action="store_true", help="line-delimited JSON logs on stderr")
        if jobs:
            p.add_argument("--jobs", type=int, default=_default_jobs(),
                           help="worker threads for per-frame stages (env HERDPOSE_JOBS)")
        return p

    p = add("scene-gen", _cmd_scene_gen, "generate a collision-free scene file")
    p.add_argument("--out", required=True)
    p.add_argument("--n-instances", type=int, default=250)
    p.add_argument("--cameras", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bounds", type=float, nargs=4, default=(-40.0, -40.0, 40.0, 40.0),
                   metavar=("XMIN", "YMIN", "XMAX", "YMAX"))
    p.add_argument("--scale", type=float, nargs=2, default=(0.8, 1.2), metavar=("LO", "HI"))
    p.add_argument("--distance", type=float, nargs=2, default=(8.0, 30.0), metavar=("LO", "HI"))
    p.add_argument("--elevation", type=float, nargs=2, default=(15.0, 90.0), metavar=("LO", "HI"))
    p.add_argument("--poses", type=int, default=8)
    p.add_argument("--pose-seed", type=int, default=0)
    p.add_argument("--width", type=int, default=1920)
    p.add_argument("--height", type=int, default=1080)
    p.add_argument("--fx", type=float, default=1400.0)
    p.add_argument("--fy", type=float, default=1400.0)
    p.add_argument("--cx", type=float, default=None)
    p.add_argument("--cy", type=float, default=None)

    p = add("render", _cmd_render, "rasterise masks and depth for every camera", jobs=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out-dir", required=True)

    p = add("annotate", _cmd_annotate, "synthesise 27-keypoint COCO annotations")
    p.add_argument("--scene", required=True)
    p.add_argument("--render-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-dim", type=float, default=30.0)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--video-id", default=None)

    p = add("augment", _cmd_augment, "crop-and-scale large instances into new frames", jobs=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--masks-dir", required=True)
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--out-masks-dir", required=True)
    p.add_argument("--area-threshold", type=float, default=5000.0)
    p.add_argument("--max-offset", type=int, default=150)
    p.add_argument("--output-size", type=int, nargs=2, default=(1920, 1080), metavar=("W", "H"))
    p.add_argument("--min-visible", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default=None)

    p = add("split", _cmd_split, "video-aware train/val split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--largest-first", action="store_true")
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-val", required=True)

    p = add("convert", _cmd_convert, "write normalized YOLO label files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)

    p = add("merge", _cmd_merge, "union manifests under a '+'-joined name")
    p.add_argument("--manifests", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mapping", default=None,
                   help="schema mapping JSON path, or 'default' for the packaged table")
    p.add_argument("--name", default=None)

    p = add("eval-det", _cmd_eval_det, "detection mAP50/mAP with aggregation")
    p.add_argument("--gt", action="append", required=True)
    p.add_argument("--results", action="append", required=True)
    p.add_argument("--iou", type=float, action="append", default=None,
                   help="IoU threshold (repeatable); default 0.50:0.05:0.95")
    p.add_argument("--tag", default=None, help="label appended to dataset names in the report")
    p.add_argument("--out", required=True)

    p = add("eval-pose", _cmd_eval_pose, "pose PCK@alpha with aggregation")
    p.add_argument("--gt", action="append", required=True)
    p.add_argument("--results", action="append", required=True)
    p.add_argument("--alpha", type=float, action="append", default=None)
    p.add_argument("--filtered", action="store_true",
                   help="exclude the misalignment-prone keypoints from evaluation")
    p.add_argument("--visible-only", action="store_true")
    p.add_argument("--tag", default=None, help="label appended to dataset names in the report")
    p.add_argument("--out", required=True)

    p = add("stats", _cmd_stats, "dataset statistics (box-ratio CDFs as CSV)")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--cdf", action="store_true")
    p.add_argument("--out-dir", required=True)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "alpha", None) is None and args.subcommand == "eval-pose":
        args.alpha = [0.05, 0.1]
    try:
        return args.func(args)
    except (ValueError, LookupError, OSError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}, sort_keys=True),
            file=sys.stderr,
        )
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
