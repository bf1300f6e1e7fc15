"""
Dataset bookkeeping: video-aware splits, merging, YOLO export
=============================================================

Frames of one video must never straddle the train/val boundary, merged
datasets concatenate their names with '+', and detector training wants
normalized per-image label files.
"""

from pathlib import Path

import numpy as np

from herdpose.geometry import PixelBox
from herdpose.keypoints import AnnotationRecord
from herdpose.manifests import (
    DatasetManifest,
    ImageEntry,
    convert_yolo,
    merge,
    save_coco,
    split_by_video,
)

out_dir = Path(__file__).parent / "output" / "03_bookkeeping"
out_dir.mkdir(parents=True, exist_ok=True)

# Build a dataset of 12 videos with uneven lengths.
rng = np.random.default_rng(0)
images, annotations = [], []
image_id = 1
for video in range(12):
    for _ in range(int(rng.integers(5, 25))):
        images.append(
            ImageEntry(image_id, f"v{video:02d}_f{image_id:04d}.png", 640, 360,
                       video_id=f"video{video:02d}")
        )
        x, y = rng.uniform(0, 500, 2)
        annotations.append(
            AnnotationRecord(image_id, 1, PixelBox(x, y * 0.6, 90, 60),
                             np.zeros((27, 3)), segmentation=1)
        )
        image_id += 1
full = DatasetManifest(name="footage", images=images, annotations=annotations)
print(f"dataset {full.name!r}: {full.image_count} frames across 12 videos")

# 80/20 split; whole videos land on one side or the other.
train, val = split_by_video(full, ratio=0.8, seed=7)
train_videos = {e.video_id for e in train.images}
val_videos = {e.video_id for e in val.images}
print(f"train: {train.image_count} frames / {len(train_videos)} videos")
print(f"val:   {val.image_count} frames / {len(val_videos)} videos")
print("videos shared between the sets:", train_videos & val_videos or "none")

save_coco(train, out_dir / "train.json")
save_coco(val, out_dir / "val.json")

# Merging re-keys image ids and joins names with '+'.
merged = merge([train, val])
print(f"merged back: {merged.name!r} with {merged.image_count} frames")
assert merged.image_count == full.image_count

# YOLO export: one label file per image, values normalized to [0, 1].
labels_dir = out_dir / "labels"
written = convert_yolo(train, labels_dir)
print(f"wrote {len(written)} label files under {labels_dir}")
print("first label line:", written[0].read_text().splitlines()[0])
