"""Dataset manifests: canonical COCO I/O, video-aware splits, merging,
YOLO conversion, and box-ratio statistics.

The canonical JSON form (sorted keys, two-space indent, shortest-roundtrip
float repr, LF endings, trailing newline) makes saved manifests byte-stable:
save(load(save(m))) is identical to save(m).
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ConversionError, ManifestError, MergeError
from .geometry import PixelBox
from .keypoints import SCHEMAS, AnnotationRecord, KeypointSchema, SchemaMapping, map_schema


@dataclass
class ImageEntry:
    """One image row: identity, pixel size, and bookkeeping tags."""

    image_id: int
    file_name: str
    width: int
    height: int
    video_id: str | int | None = None
    split: str | None = None
    mask_path: str | None = None
    crop_provenance: dict | None = None


@dataclass
class DatasetManifest:
    """Images + annotations + one keypoint schema; the unit of splitting,
    merging, conversion, and evaluation."""

    name: str
    images: list[ImageEntry] = field(default_factory=list)
    annotations: list[AnnotationRecord] = field(default_factory=list)
    schema: KeypointSchema = SCHEMAS["herd27"]

    @property
    def image_count(self) -> int:
        return len(self.images)

    def image_by_id(self) -> dict[int, ImageEntry]:
        return {entry.image_id: entry for entry in self.images}

    def annotations_by_image(self) -> dict[int, list[AnnotationRecord]]:
        grouped: dict[int, list[AnnotationRecord]] = {}
        for record in self.annotations:
            grouped.setdefault(record.image_id, []).append(record)
        return grouped

    def validate(self) -> None:
        ids = [entry.image_id for entry in self.images]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate image ids: {dupes}")
        known = set(ids)
        for record in self.annotations:
            if record.image_id not in known:
                raise ManifestError(
                    f"annotation for instance {record.instance_id} references "
                    f"missing image id {record.image_id}"
                )
            if record.schema != self.schema.name:
                raise ManifestError(
                    f"annotation schema {record.schema!r} does not match manifest "
                    f"schema {self.schema.name!r}"
                )
            if record.keypoints.shape[0] != len(self.schema):
                raise ManifestError(
                    f"annotation has {record.keypoints.shape[0]} keypoint slots, "
                    f"schema {self.schema.name!r} declares {len(self.schema)}"
                )
            if record.bbox.area <= 0.0:
                raise ManifestError(
                    f"annotation for instance {record.instance_id} in image "
                    f"{record.image_id} has a zero-area box"
                )


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _image_to_coco(entry: ImageEntry) -> dict:
    out = {
        "id": int(entry.image_id),
        "file_name": entry.file_name,
        "width": int(entry.width),
        "height": int(entry.height),
    }
    if entry.video_id is not None:
        out["video_id"] = entry.video_id
    if entry.split is not None:
        out["split"] = entry.split
    if entry.mask_path is not None:
        out["mask_path"] = entry.mask_path
    if entry.crop_provenance is not None:
        out["crop_provenance"] = entry.crop_provenance
    return out


def _record_to_coco(record: AnnotationRecord, ann_id: int) -> dict:
    kps = record.keypoints
    flat: list[float | int] = []
    for u, v, f in kps:
        flat.extend((float(u), float(v), int(f)))
    if isinstance(record.segmentation, (int, np.integer)):
        segmentation: int | list | dict = {"mask_instance_id": int(record.segmentation)}
    else:
        segmentation = record.segmentation
    return {
        "id": int(ann_id),
        "image_id": int(record.image_id),
        "instance_id": int(record.instance_id),
        "category_id": 1,
        "bbox": [float(x) for x in record.bbox.as_xywh()],
        "area": float(record.bbox.area),
        "iscrowd": 0,
        "keypoints": flat,
        "num_keypoints": record.num_labeled,
        "segmentation": segmentation,
    }


def manifest_to_coco(manifest: DatasetManifest) -> dict:
    manifest.validate()
    images = sorted(manifest.images, key=lambda e: e.image_id)
    annotations = sorted(manifest.annotations, key=lambda r: (r.image_id, r.instance_id))
    return {
        "info": {"description": manifest.name},
        "images": [_image_to_coco(entry) for entry in images],
        "annotations": [
            _record_to_coco(record, ann_id) for ann_id, record in enumerate(annotations, start=1)
        ],
        "categories": [
            {
                "id": 1,
                "name": "animal",
                "supercategory": "animal",
                "schema": manifest.schema.name,
                "keypoints": list(manifest.schema.keypoint_names),
                "flip_pairs": [list(pair) for pair in manifest.schema.flip_pairs],
            }
        ],
    }


def _schema_from_category(category: dict) -> KeypointSchema:
    tag = category.get("schema", category.get("name"))
    if tag in SCHEMAS:
        return SCHEMAS[tag]
    names = category.get("keypoints")
    if not names:
        raise ManifestError(f"category {tag!r} declares no keypoints")
    pairs = tuple(tuple(p) for p in category.get("flip_pairs", ()))
    return KeypointSchema(name=str(tag), keypoint_names=tuple(names), flip_pairs=pairs)


def manifest_from_coco(data: dict, name: str | None = None) -> DatasetManifest:
    try:
        categories = data["categories"]
        if not categories:
            raise ManifestError("manifest declares no categories")
        schema = _schema_from_category(categories[0])
        images = [
            ImageEntry(
                image_id=int(img["id"]),
                file_name=str(img["file_name"]),
                width=int(img["width"]),
                height=int(img["height"]),
                video_id=img.get("video_id"),
                split=img.get("split"),
                mask_path=img.get("mask_path"),
                crop_provenance=img.get("crop_provenance"),
            )
            for img in data["images"]
        ]
        annotations = []
        for ann in data["annotations"]:
            flat = ann.get("keypoints") or [0.0] * (3 * len(schema))
            kps = np.asarray(flat, dtype=float).reshape(-1, 3)
            seg = ann.get("segmentation", 0)
            if isinstance(seg, dict) and "mask_instance_id" in seg:
                seg = int(seg["mask_instance_id"])
            x, y, w, h = ann["bbox"]
            annotations.append(
                AnnotationRecord(
                    image_id=int(ann["image_id"]),
                    instance_id=int(ann.get("instance_id", ann["id"])),
                    bbox=PixelBox(x, y, w, h),
                    keypoints=kps,
                    schema=schema.name,
                    segmentation=seg,
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest document: {exc}") from exc
    manifest = DatasetManifest(
        name=name if name is not None else data.get("info", {}).get("description", "dataset"),
        images=images,
        annotations=annotations,
        schema=schema,
    )
    manifest.validate()
    return manifest


def save_coco(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(canonical_json(manifest_to_coco(manifest)), encoding="utf-8")


def load_coco(path) -> DatasetManifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path} is not valid JSON at offset {exc.pos}: {exc.msg}") from exc
    return manifest_from_coco(data)


def convert_yolo(manifest: DatasetManifest, out_dir) -> list[Path]:
    """Write one normalized label file per image: class cx cy w h, 6 decimals.

    Boxes are clamped to the frame before normalising, so every value lands
    in [0, 1].  Label files are named after the image file stem.
    """
    manifest.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grouped = manifest.annotations_by_image()
    written = []
    for entry in sorted(manifest.images, key=lambda e: e.image_id):
        if entry.width <= 0 or entry.height <= 0:
            raise ConversionError(f"image {entry.image_id} has zero-size dimensions")
        lines = []
        for record in grouped.get(entry.image_id, []):
            box = record.bbox.clamped(entry.width, entry.height)
            if box.area <= 0.0:
                continue
            cx = (box.x + box.w / 2.0) / entry.width
            cy = (box.y + box.h / 2.0) / entry.height
            w = box.w / entry.width
            h = box.h / entry.height
            cx, cy, w, h = (min(max(v, 0.0), 1.0) for v in (cx, cy, w, h))
            lines.append(f"0 {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}")
        path = out_dir / (Path(entry.file_name).stem + ".txt")
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        written.append(path)
    return written


def _video_groups(manifest: DatasetManifest) -> dict:
    """Images grouped by video; images without a video id are singletons."""
    groups: dict = {}
    for entry in manifest.images:
        key = entry.video_id if entry.video_id is not None else f"__image_{entry.image_id}"
        groups.setdefault(key, []).append(entry)
    return groups


def split_by_video(
    manifest: DatasetManifest,
    ratio: float = 0.8,
    seed: int = 0,
    largest_first: bool = False,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Partition into train/val without ever splitting a video.

    Videos are shuffled by the seed (or ordered largest-first) and assigned
    greedily to train until the train image count reaches ratio * total; the
    remainder goes to val.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigurationError(f"split ratio must be in (0, 1), got {ratio}")
    manifest.validate()
    groups = _video_groups(manifest)
    keys = list(groups)
    if largest_first:
        order = sorted(keys, key=lambda k: (-len(groups[k]), keys.index(k)))
    else:
        rng = np.random.default_rng(seed)
        order = [keys[i] for i in rng.permutation(len(keys))]

    target = ratio * manifest.image_count
    train_keys = set()
    count = 0
    for key in order:
        if count >= target:
            break
        train_keys.add(key)
        count += len(groups[key])

    def subset(tag: str, keep_train: bool) -> DatasetManifest:
        picked_ids = set()
        images = []
        for entry in manifest.images:
            key = entry.video_id if entry.video_id is not None else f"__image_{entry.image_id}"
            if (key in train_keys) == keep_train:
                picked_ids.add(entry.image_id)
                images.append(replace(entry, split=tag))
        annotations = [r.copy() for r in manifest.annotations if r.image_id in picked_ids]
        return DatasetManifest(
            name=f"{manifest.name}_{tag}",
            images=images,
            annotations=annotations,
            schema=manifest.schema,
        )

    train = subset("train", True)
    val = subset("val", False)
    if not val.images:
        warnings.warn(
            f"dataset {manifest.name!r} could not be split: every video landed in train",
            stacklevel=2,
        )
    return train, val


def merge(
    manifests: list[DatasetManifest],
    mapping: SchemaMapping | None = None,
) -> DatasetManifest:
    """Union of manifests with re-keyed image ids and a '+'-joined name.

    Manifests with differing schemas are converted through `mapping` when it
    applies; otherwise the merge is rejected.
    """
    if not manifests:
        raise MergeError("nothing to merge")
    for m in manifests:
        m.validate()
    schemas = {m.schema.name for m in manifests}
    if len(schemas) > 1:
        if mapping is None:
            raise MergeError(f"schemas {sorted(schemas)} differ and no mapping was given")
        converted = []
        for m in manifests:
            if m.schema.name == mapping.target.name:
                converted.append(m)
            elif m.schema.name == mapping.source.name:
                converted.append(
                    DatasetManifest(
                        name=m.name,
                        images=m.images,
                        annotations=[map_schema(r, mapping) for r in m.annotations],
                        schema=mapping.target,
                    )
                )
            else:
                raise MergeError(
                    f"manifest {m.name!r} has schema {m.schema.name!r}; mapping covers "
                    f"only {mapping.source.name!r} -> {mapping.target.name!r}"
                )
        manifests = converted

    images = []
    annotations = []
    next_id = 1
    for m in manifests:
        id_map = {}
        for entry in m.images:
            id_map[entry.image_id] = next_id
            images.append(replace(entry, image_id=next_id))
            next_id += 1
        for record in m.annotations:
            moved = record.copy()
            moved.image_id = id_map[record.image_id]
            annotations.append(moved)
    return DatasetManifest(
        name="+".join(m.name for m in manifests),
        images=images,
        annotations=annotations,
        schema=manifests[0].schema,
    )


def bbox_ratio_cdf(manifest: DatasetManifest) -> tuple[np.ndarray, np.ndarray]:
    """Sorted per-annotation box-to-image size ratios (widths, heights)."""
    manifest.validate()
    by_id = manifest.image_by_id()
    widths = []
    heights = []
    for record in manifest.annotations:
        entry = by_id[record.image_id]
        widths.append(record.bbox.w / entry.width)
        heights.append(record.bbox.h / entry.height)
    return np.sort(np.asarray(widths)), np.sort(np.asarray(heights))


def write_cdf_csv(manifest: DatasetManifest, path) -> None:
    """CSV with independently sorted width_ratio / height_ratio columns."""
    widths, heights = bbox_ratio_cdf(manifest)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["width_ratio", "height_ratio"])
        for w, h in zip(widths, heights):
            writer.writerow([f"{w:.6f}", f"{h:.6f}"])


def ecdf(samples: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Empirical CDF of `samples` evaluated at `xs` (samples must be sorted)."""
    return np.searchsorted(samples, xs, side="right") / len(samples)


def stochastically_dominates(
    larger: np.ndarray, smaller: np.ndarray, require_strict: bool = False
) -> bool:
    """True when the ECDF of `larger` lies at or below that of `smaller`
    at every shared evaluation point (first-order stochastic dominance).

    With `require_strict`, at least one point must be strictly below.
    """
    larger = np.sort(np.asarray(larger, dtype=float))
    smaller = np.sort(np.asarray(smaller, dtype=float))
    if len(larger) == 0 or len(smaller) == 0:
        return False
    xs = np.union1d(larger, smaller)
    fl = ecdf(larger, xs)
    fs = ecdf(smaller, xs)
    if not np.all(fl <= fs + 1e-12):
        return False
    if require_strict and not np.any(fl < fs - 1e-12):
        return False
    return True


def augmented_name(name: str, area_threshold: float) -> str:
    """Derived dataset name encoding the selection threshold, e.g. X -> X_5K."""
    if area_threshold >= 1000 and float(area_threshold) % 1000 == 0:
        return f"{name}_{int(area_threshold) // 1000}K"
    return f"{name}_{area_threshold:g}"
