"""Targeted crop-and-scale augmentation.

Large instances are selected by box area, a randomly padded rectangle around
each one is cropped, and the crop is rescaled to a fixed output size (aspect
ratio deliberately not preserved).  Labels are regenerated from the upscaled
masks rather than transformed copies, so boxes stay pixel-tight and keypoint
visibility is re-derived.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from PIL import Image

from .errors import ConfigurationError, ConsistencyError
from .geometry import InstanceMask, PixelBox, mask_to_box
from .keypoints import VIS_UNLABELED, AnnotationRecord, classify_visibility
from .manifests import DatasetManifest, ImageEntry, augmented_name
from .render import RenderedFrame


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs of the crop-and-scale procedure.

    `area_threshold` selects which instances spawn a crop; `max_offset` pads
    each side of the target box by an independent uniform integer offset;
    crops are rescaled to `output_size`; instances whose upscaled mask keeps
    fewer than `min_visible_pixels` pixels are dropped from the crop's
    labels.
    """

    area_threshold: float = 5000.0
    max_offset: int = 150
    output_size: tuple[int, int] = (1920, 1080)
    min_visible_pixels: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.area_threshold <= 0.0:
            raise ConfigurationError(f"area threshold must be positive, got {self.area_threshold}")
        if self.max_offset < 0:
            raise ConfigurationError(f"max offset must be >= 0, got {self.max_offset}")
        if self.output_size[0] <= 0 or self.output_size[1] <= 0:
            raise ConfigurationError(f"output size must be positive, got {self.output_size}")


@dataclass
class CropResult:
    """One generated crop: the frame, its regenerated records, and provenance."""

    frame: RenderedFrame
    records: list[AnnotationRecord]
    source_image_id: int
    target_instance_id: int
    region: PixelBox


def select_targets(records: list[AnnotationRecord], cfg: AugmentConfig) -> list[AnnotationRecord]:
    """Records whose box area strictly exceeds the threshold, order preserved."""
    return [r for r in records if r.bbox.area > cfg.area_threshold]


def crop_region(
    bbox: PixelBox,
    frame_size: tuple[int, int],
    max_offset: int,
    rng: np.random.Generator,
) -> PixelBox:
    """Padded integer rectangle around the box, clamped to the frame.

    Four independent uniform integer offsets in [0, max_offset] expand the
    left, top, right, and bottom sides; the result always contains the
    original box intersected with the frame.
    """
    width, height = frame_size
    left, top, right, bottom = (int(o) for o in rng.integers(0, max_offset + 1, size=4))
    x0 = max(int(np.floor(bbox.x)) - left, 0)
    y0 = max(int(np.floor(bbox.y)) - top, 0)
    x1 = min(int(np.ceil(bbox.right)) + right, width)
    y1 = min(int(np.ceil(bbox.bottom)) + bottom, height)
    return PixelBox(x0, y0, max(x1 - x0, 0), max(y1 - y0, 0))


def _nearest_indices(offset: int, src_len: int, dst_len: int) -> np.ndarray:
    idx = np.floor((np.arange(dst_len) + 0.5) * (src_len / dst_len)).astype(int)
    return np.clip(idx, 0, src_len - 1) + offset


def _resize_image_bilinear(image: np.ndarray, region: PixelBox, size: tuple[int, int]) -> np.ndarray:
    x0, y0 = int(region.x), int(region.y)
    x1, y1 = int(region.right), int(region.bottom)
    crop = Image.fromarray(image[y0:y1, x0:x1])
    return np.asarray(crop.resize(size, resample=Image.BILINEAR))


def crop_and_scale(
    frame: RenderedFrame,
    records: list[AnnotationRecord],
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> list[CropResult]:
    """One rescaled crop per selected target instance.

    Masks and depth resample nearest-neighbour, RGB (when present) bilinear.
    Every instance retaining at least `min_visible_pixels` mask pixels gets a
    regenerated record: a mask-tight box and affine-transformed keypoints
    whose visibility is re-tested against the upscaled mask.
    """
    out_w, out_h = cfg.output_size
    results = []
    for target in select_targets(records, cfg):
        region = crop_region(target.bbox, (frame.width, frame.height), cfg.max_offset, rng)
        if region.area <= 0.0:
            raise ConsistencyError(
                f"target {target.instance_id} box {target.bbox} does not intersect the frame"
            )
        rows = _nearest_indices(int(region.y), int(region.h), out_h)
        cols = _nearest_indices(int(region.x), int(region.w), out_w)
        window = np.ix_(rows, cols)
        up_mask = InstanceMask(ids=frame.mask.ids[window])
        up_depth = frame.depth[window] if frame.depth is not None else None
        up_image = (
            _resize_image_bilinear(frame.image, region, cfg.output_size)
            if frame.image is not None
            else None
        )

        sx = out_w / region.w
        sy = out_h / region.h
        new_records = []
        for record in records:
            iid = record.instance_id
            if up_mask.pixel_count(iid) < cfg.min_visible_pixels:
                continue
            kps = np.zeros_like(record.keypoints)
            for slot, (u, v, flag) in enumerate(record.keypoints):
                if flag == VIS_UNLABELED:
                    continue
                u2 = (u - region.x) * sx
                v2 = (v - region.y) * sy
                kps[slot] = (u2, v2, classify_visibility((u2, v2), up_mask, iid))
            new_records.append(
                AnnotationRecord(
                    image_id=frame.image_id,
                    instance_id=iid,
                    bbox=mask_to_box(up_mask, iid),
                    keypoints=kps,
                    schema=record.schema,
                    segmentation=iid,
                )
            )
        results.append(
            CropResult(
                frame=RenderedFrame(
                    image_id=frame.image_id, mask=up_mask, depth=up_depth, image=up_image
                ),
                records=new_records,
                source_image_id=frame.image_id,
                target_instance_id=target.instance_id,
                region=region,
            )
        )
    return results


MaskSource = Mapping[int, InstanceMask] | Callable[[ImageEntry], InstanceMask]


def augment_dataset(
    manifest: DatasetManifest,
    masks: MaskSource,
    cfg: AugmentConfig,
    jobs: int = 1,
) -> tuple[DatasetManifest, dict[int, InstanceMask]]:
    """Original frames plus all generated crops, with provenance recorded.

    `masks` maps image ids to instance masks (a mapping or a callable on the
    image entry).  Per-frame randomness derives from (cfg.seed, image_id), so
    results are byte-identical for a given seed regardless of `jobs`.
    Returns the widened manifest and the masks of the generated frames keyed
    by their new image ids.
    """
    manifest.validate()
    if callable(masks):
        mask_for = masks
    else:
        def mask_for(entry: ImageEntry) -> InstanceMask:
            try:
                return masks[entry.image_id]
            except KeyError:
                raise ConsistencyError(f"no mask available for image {entry.image_id}") from None

    grouped = manifest.annotations_by_image()
    entries = sorted(manifest.images, key=lambda e: e.image_id)

    def process(entry: ImageEntry) -> list[CropResult]:
        frame = RenderedFrame(image_id=entry.image_id, mask=mask_for(entry))
        rng = np.random.default_rng((cfg.seed, entry.image_id))
        return crop_and_scale(frame, grouped.get(entry.image_id, []), cfg, rng)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            all_results = list(pool.map(process, entries))
    else:
        all_results = [process(entry) for entry in entries]

    out_w, out_h = cfg.output_size
    next_id = max((entry.image_id for entry in manifest.images), default=0) + 1
    new_images: list[ImageEntry] = []
    new_annotations: list[AnnotationRecord] = []
    new_masks: dict[int, InstanceMask] = {}
    for entry, results in zip(entries, all_results):
        stem = Path(entry.file_name).stem
        suffix = Path(entry.file_name).suffix or ".png"
        for j, result in enumerate(results):
            image_id = next_id
            next_id += 1
            new_images.append(
                ImageEntry(
                    image_id=image_id,
                    file_name=f"{stem}_crop{j:02d}{suffix}",
                    width=out_w,
                    height=out_h,
                    video_id=entry.video_id,
                    split=entry.split,
                    crop_provenance={
                        "source_image_id": int(result.source_image_id),
                        "target_instance_id": int(result.target_instance_id),
                        "crop_region": [float(x) for x in result.region.as_xywh()],
                    },
                )
            )
            for record in result.records:
                moved = record.copy()
                moved.image_id = image_id
                new_annotations.append(moved)
            new_masks[image_id] = result.frame.mask

    combined = DatasetManifest(
        name=augmented_name(manifest.name, cfg.area_threshold),
        images=[replace(entry) for entry in manifest.images] + new_images,
        annotations=[r.copy() for r in manifest.annotations] + new_annotations,
        schema=manifest.schema,
    )
    return combined, new_masks
