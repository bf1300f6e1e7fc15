"""Keypoint schemas, ground-truth synthesis, and schema mapping.

Ground truth is synthesised geometrically: every keypoint is the 3D centroid
of a labelled vertex group, projected through the frame's camera; visibility
follows the COCO convention (0 unlabeled, 1 labeled-occluded, 2
labeled-visible) with "visible" meaning the projected pixel lands on the
instance's own mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import TYPE_CHECKING, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import BehindCameraError, ConsistencyError, MappingError, SchemaError
from .geometry import CameraModel, InstanceMask, PixelBox, mask_to_box, project

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .layout import SceneInstance, SceneSpec
    from .render import RenderedFrame

VIS_UNLABELED = 0
VIS_OCCLUDED = 1
VIS_VISIBLE = 2


class Keypoint(NamedTuple):
    u: float
    v: float
    visibility: int


def _flip_pairs_from_names(names: Sequence[str]) -> tuple[tuple[int, int], ...]:
    pairs = []
    for i, name in enumerate(names):
        if name.startswith("left_"):
            partner = "right_" + name[len("left_"):]
            pairs.append((i, names.index(partner)))
        elif name.endswith("_lf"):
            pairs.append((i, names.index(name[:-3] + "_rf")))
        elif name.endswith("_lb"):
            pairs.append((i, names.index(name[:-3] + "_rb")))
    return tuple(pairs)


@dataclass(frozen=True)
class KeypointSchema:
    """Ordered keypoint names plus their horizontal-flip partner pairs."""

    name: str
    keypoint_names: tuple[str, ...]
    flip_pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if len(set(self.keypoint_names)) != len(self.keypoint_names):
            raise SchemaError(f"schema {self.name!r} has duplicate keypoint names")
        for i, j in self.flip_pairs:
            if not (0 <= i < len(self)) or not (0 <= j < len(self)) or i == j:
                raise SchemaError(f"schema {self.name!r} has invalid flip pair ({i}, {j})")

    def __len__(self) -> int:
        return len(self.keypoint_names)

    def index(self, keypoint_name: str) -> int:
        try:
            return self.keypoint_names.index(keypoint_name)
        except ValueError:
            raise SchemaError(f"schema {self.name!r} has no keypoint {keypoint_name!r}") from None

    def partner(self, slot: int) -> int:
        """Flip-partner slot; midline keypoints are their own partner."""
        for i, j in self.flip_pairs:
            if slot == i:
                return j
            if slot == j:
                return i
        return slot


HERD27 = KeypointSchema(
    name="herd27",
    keypoint_names=(
        "hoof_lf", "hoof_rf", "hoof_rb", "hoof_lb",
        "knee_lf", "knee_rf", "knee_rb", "knee_lb",
        "thigh_lf", "thigh_rf", "thigh_rb", "thigh_lb",
        "tail_start", "tail_end",
        "left_eye", "right_eye",
        "left_ear_tip", "right_ear_tip",
        "left_ear_base", "right_ear_base",
        "neck_start", "neck_end",
        "nose", "skull",
        "body_middle", "back_end", "back_front",
    ),
    flip_pairs=_flip_pairs_from_names((
        "hoof_lf", "hoof_rf", "hoof_rb", "hoof_lb",
        "knee_lf", "knee_rf", "knee_rb", "knee_lb",
        "thigh_lf", "thigh_rf", "thigh_rb", "thigh_lb",
        "tail_start", "tail_end",
        "left_eye", "right_eye",
        "left_ear_tip", "right_ear_tip",
        "left_ear_base", "right_ear_base",
        "neck_start", "neck_end",
        "nose", "skull",
        "body_middle", "back_end", "back_front",
    )),
)

# The canonical 17-keypoint quadruped schema used by the common real datasets.
QUAD17 = KeypointSchema(
    name="quad17",
    keypoint_names=(
        "left_eye", "right_eye", "nose", "neck", "root_of_tail",
        "left_shoulder", "left_elbow", "left_front_paw",
        "right_shoulder", "right_elbow", "right_front_paw",
        "left_hip", "left_knee", "left_back_paw",
        "right_hip", "right_knee", "right_back_paw",
    ),
    flip_pairs=_flip_pairs_from_names((
        "left_eye", "right_eye", "nose", "neck", "root_of_tail",
        "left_shoulder", "left_elbow", "left_front_paw",
        "right_shoulder", "right_elbow", "right_front_paw",
        "left_hip", "left_knee", "left_back_paw",
        "right_hip", "right_knee", "right_back_paw",
    )),
)

SCHEMAS = {HERD27.name: HERD27, QUAD17.name: QUAD17}

# Vertex-group numbering: group g labels the vertices of keypoint slot g-1.
N_KEYPOINT_GROUPS = len(HERD27)

# Keypoints whose synthetic placement is known to sit slightly off the
# usual annotator convention; excluded by the "filtered" evaluation preset.
_FILTERED_OUT = {
    HERD27.name: ("thigh_lf", "thigh_rf", "thigh_rb", "thigh_lb", "tail_start"),
    QUAD17.name: ("left_shoulder", "right_shoulder", "left_hip", "right_hip", "root_of_tail"),
}


def filtered_eval_slots(schema: KeypointSchema = HERD27) -> tuple[int, ...]:
    """Evaluation slot subset with the misalignment-prone keypoints removed."""
    if schema.name not in _FILTERED_OUT:
        raise SchemaError(f"no filtered preset for schema {schema.name!r}")
    excluded = {schema.index(n) for n in _FILTERED_OUT[schema.name]}
    return tuple(i for i in range(len(schema)) if i not in excluded)


def group_swap_table(schema: KeypointSchema = HERD27) -> dict[int, int]:
    """Vertex-group relabelling under horizontal mirroring (1-based groups)."""
    return {slot + 1: schema.partner(slot) + 1 for slot in range(len(schema))}


@dataclass
class AnnotationRecord:
    """One animal in one image: box, keypoints, and segmentation reference.

    `keypoints` is a (K, 3) float array with columns (u, v, visibility); K
    must match the schema.  `segmentation` is the instance id in the frame's
    mask, or a COCO polygon list.
    """

    image_id: int
    instance_id: int
    bbox: PixelBox
    keypoints: np.ndarray
    schema: str = HERD27.name
    segmentation: int | list = field(default=0)

    def __post_init__(self):
        kps = np.asarray(self.keypoints, dtype=float)
        if kps.ndim != 2 or kps.shape[1] != 3:
            raise SchemaError(f"keypoints must be (K, 3), got shape {kps.shape}")
        schema = SCHEMAS.get(self.schema)
        if schema is not None and kps.shape[0] != len(schema):
            raise SchemaError(
                f"schema {self.schema!r} expects {len(schema)} keypoints, got {kps.shape[0]}"
            )
        if not np.all(np.isin(kps[:, 2], (VIS_UNLABELED, VIS_OCCLUDED, VIS_VISIBLE))):
            raise SchemaError("keypoint visibility flags must be 0, 1, or 2")
        self.keypoints = kps

    @property
    def num_labeled(self) -> int:
        return int(np.count_nonzero(self.keypoints[:, 2] > 0))

    def copy(self) -> "AnnotationRecord":
        return AnnotationRecord(
            image_id=self.image_id,
            instance_id=self.instance_id,
            bbox=self.bbox,
            keypoints=self.keypoints.copy(),
            schema=self.schema,
            segmentation=self.segmentation,
        )


def group_centroid(instance: "SceneInstance", group: int) -> np.ndarray:
    """3D mean of the placed vertices carrying the given group label (1..27)."""
    if not 1 <= group <= N_KEYPOINT_GROUPS:
        raise SchemaError(f"group must be in 1..{N_KEYPOINT_GROUPS}, got {group}")
    member = instance.group_of_vertex == group
    if not member.any():
        raise SchemaError(f"instance {instance.instance_id} has no vertices in group {group}")
    return instance.placed_vertices()[member].mean(axis=0)


def classify_visibility(kp_pixel: tuple[float, float], mask: InstanceMask, instance_id: int) -> int:
    """COCO visibility of a projected keypoint against the instance mask.

    Visible (2) when the integer pixel containing (u, v) is in-frame and
    carries the instance's own id; occluded (1) otherwise, including
    out-of-frame projections.
    """
    u, v = kp_pixel
    col = int(np.floor(u))
    row = int(np.floor(v))
    if 0 <= col < mask.width and 0 <= row < mask.height and int(mask.ids[row, col]) == instance_id:
        return VIS_VISIBLE
    return VIS_OCCLUDED


def annotate_frame(
    scene: "SceneSpec",
    cam: CameraModel,
    frame: "RenderedFrame",
    min_dim: float = 30.0,
) -> list[AnnotationRecord]:
    """Emit one 27-keypoint record per sufficiently large instance in the frame.

    Instances whose mask box has max(w, h) <= min_dim are skipped.  Keypoints
    behind the camera get visibility 0; all others carry the mask-derived
    visibility flag.
    """
    by_id = {inst.instance_id: inst for inst in scene.instances}
    records = []
    for iid in frame.mask.instance_ids():
        iid = int(iid)
        inst = by_id.get(iid)
        if inst is None:
            raise ConsistencyError(f"mask instance {iid} does not exist in the scene")
        bbox = mask_to_box(frame.mask, iid)
        if max(bbox.w, bbox.h) <= min_dim:
            continue
        kps = np.zeros((N_KEYPOINT_GROUPS, 3))
        for group in range(1, N_KEYPOINT_GROUPS + 1):
            centroid = group_centroid(inst, group)
            try:
                u, v, _ = project(centroid, cam)
            except BehindCameraError:
                continue  # slot stays (0, 0, 0)
            kps[group - 1] = (u, v, classify_visibility((u, v), frame.mask, iid))
        records.append(
            AnnotationRecord(
                image_id=frame.image_id,
                instance_id=iid,
                bbox=bbox,
                keypoints=kps,
                schema=HERD27.name,
                segmentation=iid,
            )
        )
    return records


@dataclass(frozen=True)
class SchemaMapping:
    """Injective slot correspondence between two keypoint schemas."""

    source: KeypointSchema
    target: KeypointSchema
    slot_pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        src = [s for s, _ in self.slot_pairs]
        tgt = [t for _, t in self.slot_pairs]
        if len(set(src)) != len(src) or len(set(tgt)) != len(tgt):
            raise MappingError("schema mapping must be injective on both sides")
        for s, t in self.slot_pairs:
            if not (0 <= s < len(self.source)) or not (0 <= t < len(self.target)):
                raise MappingError(f"slot pair ({s}, {t}) is out of range")

    def inverted(self) -> "SchemaMapping":
        return SchemaMapping(
            source=self.target,
            target=self.source,
            slot_pairs=tuple((t, s) for s, t in self.slot_pairs),
        )

    @classmethod
    def from_name_pairs(
        cls,
        source: KeypointSchema,
        target: KeypointSchema,
        name_pairs: Iterable[tuple[str, str]],
    ) -> "SchemaMapping":
        return cls(
            source=source,
            target=target,
            slot_pairs=tuple((source.index(a), target.index(b)) for a, b in name_pairs),
        )

    @classmethod
    def load(cls, path) -> "SchemaMapping":
        """Load a mapping file: {"source": tag, "target": tag, "pairs": [[a, b], ...]}."""
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        try:
            source = SCHEMAS[data["source"]]
            target = SCHEMAS[data["target"]]
            pairs = [(str(a), str(b)) for a, b in data["pairs"]]
        except KeyError as exc:
            raise MappingError(f"mapping file {path} is missing or names unknown schema: {exc}")
        return cls.from_name_pairs(source, target, pairs)


def default_mapping() -> SchemaMapping:
    """The packaged quad17 -> herd27 correspondence table."""
    ref = resources.files("herdpose.data").joinpath("map_quad17_herd27.json")
    data = json.loads(ref.read_text(encoding="utf-8"))
    return SchemaMapping.from_name_pairs(
        SCHEMAS[data["source"]], SCHEMAS[data["target"]], [(a, b) for a, b in data["pairs"]]
    )


def map_schema(record: AnnotationRecord, mapping: SchemaMapping) -> AnnotationRecord:
    """Re-express a record in the mapping's target schema.

    Mapped slots copy coordinates and visibility; unmapped target slots get
    visibility 0.
    """
    if record.schema != mapping.source.name:
        raise MappingError(
            f"record schema {record.schema!r} does not match mapping source {mapping.source.name!r}"
        )
    kps = np.zeros((len(mapping.target), 3))
    for s, t in mapping.slot_pairs:
        kps[t] = record.keypoints[s]
    return AnnotationRecord(
        image_id=record.image_id,
        instance_id=record.instance_id,
        bbox=record.bbox,
        keypoints=kps,
        schema=mapping.target.name,
        segmentation=record.segmentation,
    )


def flip_record(record: AnnotationRecord, frame_width: float) -> AnnotationRecord:
    """Annotation of the horizontally mirrored frame.

    Coordinates mirror as u -> width - u and flip-partner slots swap;
    visibility-0 slots stay untouched since their coordinates carry no
    meaning.
    """
    schema = SCHEMAS.get(record.schema)
    if schema is None:
        raise SchemaError(f"unknown schema tag {record.schema!r}")
    kps = np.zeros_like(record.keypoints)
    for slot in range(len(schema)):
        src = record.keypoints[schema.partner(slot)]
        if src[2] == VIS_UNLABELED:
            continue
        kps[slot] = (frame_width - src[0], src[1], src[2])
    bbox = PixelBox(frame_width - record.bbox.right, record.bbox.y, record.bbox.w, record.bbox.h)
    return AnnotationRecord(
        image_id=record.image_id,
        instance_id=record.instance_id,
        bbox=bbox,
        keypoints=kps,
        schema=record.schema,
        segmentation=record.segmentation,
    )
