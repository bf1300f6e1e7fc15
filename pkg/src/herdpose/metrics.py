"""Detection and pose evaluation: AP/mAP, PCK, and report aggregation.

Average precision follows the COCO/YOLO convention: greedy matching in score
order (at most one detection per ground-truth box), a monotone precision
envelope, and 101-point interpolation over the recall grid 0.00..1.00.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AggregationError, EvaluationError
from .geometry import GeometryError, PixelBox, iou
from .keypoints import AnnotationRecord
from .manifests import DatasetManifest

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class Detection:
    """One predicted box with a confidence score."""

    image_id: int
    bbox: PixelBox
    score: float
    class_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise EvaluationError(f"detection score must be in [0, 1], got {self.score}")
        if self.bbox.area <= 0.0:
            raise EvaluationError(f"detection box must have positive area: {self.bbox}")


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: int
    bbox: PixelBox


def average_precision(
    dets: list[Detection],
    gts: list[GroundTruthBox],
    iou_thresh: float,
) -> float | None:
    """101-point interpolated AP at one IoU threshold.

    Returns None when there is no ground truth anywhere (the metric is
    undefined, not zero).  Ties break deterministically: equal scores by
    detection input order, equal IoU by ground-truth input order.
    """
    if not gts:
        return None
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    gts_by_image: dict[int, list[int]] = {}
    for gi, gt in enumerate(gts):
        gts_by_image.setdefault(gt.image_id, []).append(gi)

    matched = [False] * len(gts)
    tp = np.zeros(len(dets))
    for rank, di in enumerate(order):
        det = dets[di]
        best_iou = 0.0
        best_gi = -1
        for gi in gts_by_image.get(det.image_id, ()):
            if matched[gi]:
                continue
            overlap = iou(det.bbox, gts[gi].bbox)
            if overlap >= iou_thresh and overlap > best_iou:
                best_iou = overlap
                best_gi = gi
        if best_gi >= 0:
            matched[best_gi] = True
            tp[rank] = 1.0
    if not dets:
        return 0.0

    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recalls = tp_cum / len(gts)
    precisions = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    idx = np.searchsorted(recalls, RECALL_GRID, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def mean_ap(
    dets: list[Detection],
    gts: list[GroundTruthBox],
    thresholds: tuple[float, ...] = IOU_THRESHOLDS,
) -> tuple[float | None, float | None]:
    """(mAP50, mAP) with mAP averaged over the IoU threshold set.

    mAP50 is the AP at threshold 0.5 and is None when 0.5 is not in the set.
    """
    if not thresholds:
        raise EvaluationError("need at least one IoU threshold")
    aps = [average_precision(dets, gts, t) for t in thresholds]
    if aps[0] is None:
        return None, None
    map50 = None
    for t, ap in zip(thresholds, aps):
        if abs(t - 0.5) < 1e-9:
            map50 = ap
            break
    return map50, float(np.mean(aps))


def pck(
    pred: np.ndarray,
    gt: AnnotationRecord,
    alpha: float,
    eval_slots: tuple[int, ...] | None = None,
    visible_only: bool = False,
) -> tuple[int, int]:
    """(correct, evaluated) keypoint counts for one annotation.

    A keypoint counts as correct when its prediction lies within
    alpha * max(box width, box height) of the ground truth.  Labeled-occluded
    keypoints are evaluated unless `visible_only` is set.
    """
    if alpha <= 0.0:
        raise EvaluationError(f"alpha must be positive, got {alpha}")
    pred = np.asarray(pred, dtype=float)
    if pred.ndim != 2 or pred.shape[1] not in (2, 3):
        raise EvaluationError(f"prediction must be (K, 2) or (K, 3), got shape {pred.shape}")
    if pred.shape[0] != gt.keypoints.shape[0]:
        raise EvaluationError(
            f"prediction has {pred.shape[0]} slots, ground truth has {gt.keypoints.shape[0]}"
        )
    min_vis = 2 if visible_only else 1
    selected = gt.keypoints[:, 2] >= min_vis
    if eval_slots is not None:
        in_subset = np.zeros(len(selected), dtype=bool)
        in_subset[list(eval_slots)] = True
        selected &= in_subset
    if not selected.any():
        return 0, 0
    threshold = alpha * max(gt.bbox.w, gt.bbox.h)
    distances = np.linalg.norm(pred[selected, :2] - gt.keypoints[selected, :2], axis=1)
    return int(np.count_nonzero(distances <= threshold)), int(selected.sum())


def evaluate_detections(
    dets: list[Detection],
    manifest: DatasetManifest,
    thresholds: tuple[float, ...] = IOU_THRESHOLDS,
) -> dict[str, float | None]:
    """Dataset-level {"mAP50", "mAP"} against a manifest's boxes."""
    manifest.validate()
    gts = [GroundTruthBox(r.image_id, r.bbox) for r in manifest.annotations]
    map50, map_all = mean_ap(dets, gts, thresholds)
    return {"mAP50": map50, "mAP": map_all}


def evaluate_pose(
    preds: dict[tuple[int, int], np.ndarray],
    manifest: DatasetManifest,
    alphas: tuple[float, ...] = (0.05, 0.1),
    eval_slots: tuple[int, ...] | None = None,
    visible_only: bool = False,
) -> dict[str, float | None]:
    """Dataset-level PCK@alpha values, keyed "P_<alpha>".

    `preds` maps (image_id, instance_id) to a (K, 2) or (K, 3) array.  An
    annotation without a prediction counts all its evaluated keypoints as
    incorrect.
    """
    manifest.validate()
    totals = {alpha: [0, 0] for alpha in alphas}
    for record in sorted(manifest.annotations, key=lambda r: (r.image_id, r.instance_id)):
        pred = preds.get((record.image_id, record.instance_id))
        for alpha in alphas:
            if pred is None:
                missing = pck(record.keypoints, record, alpha, eval_slots, visible_only)[1]
                totals[alpha][1] += missing
            else:
                correct, evaluated = pck(pred, record, alpha, eval_slots, visible_only)
                totals[alpha][0] += correct
                totals[alpha][1] += evaluated
    return {
        f"P_{alpha:g}": (c / e if e else None) for alpha, (c, e) in totals.items()
    }


@dataclass
class DatasetResult:
    """Metric values of one validation dataset; None marks an absent metric."""

    name: str
    image_count: int
    values: dict[str, float | None]


@dataclass
class EvalReport:
    per_dataset: list[DatasetResult]
    average: dict[str, float] = field(default_factory=dict)
    weighted_average: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "datasets": [
                {"name": d.name, "image_count": d.image_count, "values": d.values}
                for d in self.per_dataset
            ],
            "average": self.average,
            "weighted_average": self.weighted_average,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def aggregate(per_dataset: list[DatasetResult]) -> EvalReport:
    """Plain and image-count-weighted means per metric.

    A metric missing from some datasets is averaged over the datasets where
    it is present; weights are those datasets' image counts.
    """
    if not per_dataset:
        raise AggregationError("no per-dataset results to aggregate")
    metric_names: list[str] = []
    for result in per_dataset:
        if result.image_count <= 0:
            raise AggregationError(f"dataset {result.name!r} has no images")
        for key, value in result.values.items():
            if value is not None and not 0.0 <= value <= 1.0:
                raise AggregationError(f"metric {key}={value} of {result.name!r} is outside [0, 1]")
            if key not in metric_names:
                metric_names.append(key)

    average = {}
    weighted = {}
    for key in metric_names:
        present = [(r.values[key], r.image_count) for r in per_dataset if r.values.get(key) is not None]
        if not present:
            continue
        values = np.array([v for v, _ in present])
        counts = np.array([n for _, n in present], dtype=float)
        average[key] = float(values.mean())
        weighted[key] = float((values * counts).sum() / counts.sum())
    return EvalReport(per_dataset=list(per_dataset), average=average, weighted_average=weighted)


def format_table(report: EvalReport) -> str:
    """Aligned-column text table: one dataset per row plus the aggregate rows."""
    metric_names: list[str] = []
    for result in report.per_dataset:
        for key in result.values:
            if key not in metric_names:
                metric_names.append(key)
    header = ["Dataset", "Images", *metric_names]

    def fmt(value: float | None) -> str:
        return "-" if value is None else f"{value:.3f}"

    rows = [
        [d.name, str(d.image_count), *(fmt(d.values.get(k)) for k in metric_names)]
        for d in report.per_dataset
    ]
    rows.append(["Average", "", *(fmt(report.average.get(k)) for k in metric_names)])
    rows.append(["W. Avg.", "", *(fmt(report.weighted_average.get(k)) for k in metric_names)])
    widths = [max(len(row[i]) for row in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in [header, *rows]]
    return "\n".join(lines) + "\n"


def load_detection_results(path) -> list[Detection]:
    """COCO results JSON: [{"image_id", "bbox" [x,y,w,h], "score", ...}]."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EvaluationError(f"{path} is not valid JSON at offset {exc.pos}: {exc.msg}") from exc
    try:
        return [
            Detection(
                image_id=int(e["image_id"]),
                bbox=PixelBox(*(float(v) for v in e["bbox"])),
                score=float(e["score"]),
                class_id=int(e.get("category_id", 0)),
            )
            for e in data
        ]
    except (KeyError, TypeError, ValueError, GeometryError) as exc:
        raise EvaluationError(f"malformed detection results in {path}: {exc}") from exc


def load_keypoint_results(path, manifest: DatasetManifest) -> dict[tuple[int, int], np.ndarray]:
    """COCO keypoint results: [{"image_id", "keypoints" flat, "instance_id"?}].

    Entries without an instance_id are matched to the manifest's annotations
    of that image in file order.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise EvaluationError(f"{path} is not valid JSON at offset {exc.pos}: {exc.msg}") from exc
    by_image = manifest.annotations_by_image()
    cursor: dict[int, int] = {}
    preds: dict[tuple[int, int], np.ndarray] = {}
    try:
        for entry in data:
            image_id = int(entry["image_id"])
            kps = np.asarray(entry["keypoints"], dtype=float).reshape(-1, 3)
            if "instance_id" in entry:
                instance_id = int(entry["instance_id"])
            else:
                pos = cursor.get(image_id, 0)
                records = by_image.get(image_id, [])
                if pos >= len(records):
                    raise EvaluationError(
                        f"more predictions than annotations for image {image_id}"
                    )
                instance_id = records[pos].instance_id
                cursor[image_id] = pos + 1
            preds[(image_id, instance_id)] = kps
    except (KeyError, TypeError, ValueError) as exc:
        raise EvaluationError(f"malformed keypoint results in {path}: {exc}") from exc
    return preds
