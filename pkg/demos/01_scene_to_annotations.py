"""
From an empty field to COCO keypoint annotations
=================================================

Walks the core generation loop end to end: build a pose library, scatter
collision-checked animals on the ground plane, aim cameras at the herd,
rasterise instance masks and depth, and synthesise 27-keypoint annotations.
"""

from pathlib import Path

import numpy as np

from herdpose import (
    GroundBounds,
    Intrinsics,
    annotate_frame,
    build_pose_library,
    generate_scene,
    rasterize,
    save_mask_png,
    save_scene,
)
from herdpose.manifests import DatasetManifest, ImageEntry, save_coco
from herdpose.render import save_depth_grid

out_dir = Path(__file__).parent / "output" / "01_scene"
out_dir.mkdir(parents=True, exist_ok=True)

# A pose library is just a list of labelled vertex clouds.  The built-in
# procedural quadruped provides one so no external asset is needed.
library = build_pose_library(n_poses=8, seed=0)
print(f"pose library: {len(library)} poses, {library[0].vertices.shape[0]} vertices each")

# Scatter 40 animals over an 60x60 m field; overlapping placements are
# rejected, so the accepted count is usually below the attempt count.
scene = generate_scene(
    library,
    n_instances=40,
    bounds=GroundBounds(-30, -30, 30, 30),
    k_cameras=3,
    distance_range=(12.0, 35.0),
    intrinsics=Intrinsics(fx=600.0, fy=600.0, cx=240.0, cy=135.0, width=480, height=270),
    seed=42,
)
print(f"accepted {len(scene.instances)} of 40 attempted placements")
save_scene(scene, out_dir / "scene.json")

# Render every camera and collect annotations into one manifest.
images, annotations = [], []
for index, cam in enumerate(scene.cameras):
    frame = rasterize(scene, cam, image_id=index + 1)
    save_mask_png(frame.mask, out_dir / f"mask_{frame.image_id:06d}.png")
    save_depth_grid(frame.depth, out_dir / f"depth_{frame.image_id:06d}.bin")

    records = annotate_frame(scene, cam, frame, min_dim=30.0)
    in_frame = len(frame.mask.instance_ids())
    print(
        f"camera {index}: {in_frame} instances visible, "
        f"{len(records)} large enough to label"
    )
    for record in records[:2]:
        visible = int(np.count_nonzero(record.keypoints[:, 2] == 2))
        occluded = int(np.count_nonzero(record.keypoints[:, 2] == 1))
        print(
            f"  instance {record.instance_id}: box {record.bbox.w:.0f}x{record.bbox.h:.0f}, "
            f"{visible} visible / {occluded} occluded keypoints"
        )
    images.append(
        ImageEntry(
            image_id=frame.image_id,
            file_name=f"image_{frame.image_id:06d}.png",
            width=frame.width,
            height=frame.height,
            video_id="demo-scene",
            mask_path=f"mask_{frame.image_id:06d}.png",
        )
    )
    annotations.extend(records)

manifest = DatasetManifest(name="demo", images=images, annotations=annotations)
save_coco(manifest, out_dir / "annotations.json")
print(f"wrote {out_dir / 'annotations.json'} with {len(annotations)} annotations")
