"""Synthetic herd-scene dataset tooling.

Procedural scene layout, mock rendering, keypoint ground-truth synthesis,
crop-and-scale augmentation, dataset manifests, and detection/pose
evaluation.
"""

__version__ = "0.1.0"

from .augment import AugmentConfig, augment_dataset, crop_and_scale, crop_region, select_targets
from .geometry import (
    CameraModel,
    InstanceMask,
    Intrinsics,
    PixelBox,
    iou,
    mask_to_box,
    project,
    unproject,
)
from .keypoints import (
    HERD27,
    QUAD17,
    AnnotationRecord,
    KeypointSchema,
    SchemaMapping,
    annotate_frame,
    classify_visibility,
    default_mapping,
    filtered_eval_slots,
    flip_record,
    group_centroid,
    group_swap_table,
    map_schema,
)
from .layout import (
    GroundBounds,
    PosedModel,
    SceneInstance,
    SceneSpec,
    generate_scene,
    load_scene,
    mirror_scene,
    place_cameras,
    place_instances,
    save_scene,
)
from .manifests import (
    DatasetManifest,
    ImageEntry,
    bbox_ratio_cdf,
    convert_yolo,
    load_coco,
    merge,
    save_coco,
    split_by_video,
    stochastically_dominates,
)
from .metrics import (
    Detection,
    EvalReport,
    GroundTruthBox,
    aggregate,
    average_precision,
    evaluate_detections,
    evaluate_pose,
    mean_ap,
    pck,
)
from .quadruped import build_pose_library
from .render import RenderedFrame, load_mask_png, rasterize, save_mask_png
