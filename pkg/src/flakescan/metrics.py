"""Detection evaluation: IoU, greedy matching, AP/mAP, per-image confusion.

The per-image confusion semantics classify each whole image into exactly one
of TP/FP/FN/TN by whether it contains at least one correctly detected flake;
precision and recall follow from those counts.  AP uses all-point
precision-envelope integration at a single IoU threshold (default 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import BBox, BitMask, Detection


@dataclass(frozen=True)
class MatchResult:
    pairs: Tuple[Tuple[int, int, float], ...]  # (detection idx, gt idx, iou)
    unmatched_detections: Tuple[int, ...]
    unmatched_gts: Tuple[int, ...]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class PrScores:
    """Precision/recall; None marks an undefined score (zero denominator)."""

    precision: Optional[float]
    recall: Optional[float]


def iou_box(a: BBox, b: BBox) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_mask(a: BitMask, b: BitMask) -> float:
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"mask shape mismatch: {a.bits.shape} vs {b.bits.shape}")
    inter = int(np.logical_and(a.bits, b.bits).sum())
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 0.0
    return inter / union


def match_detections(
    det_boxes: Sequence[BBox],
    det_scores: Sequence[float],
    gt_boxes: Sequence[BBox],
    iou_threshold: float = 0.5,
    det_materials: Optional[Sequence[str]] = None,
    gt_materials: Optional[Sequence[str]] = None,
) -> MatchResult:
    """Greedy one-to-one matching, detections in descending score order.

    Each detection takes the unmatched GT of highest IoU >= threshold (same
    material when material lists are given); IoU ties break toward the lower
    GT index.  Deterministic regardless of input ordering (score ties break
    by detection index).
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    order = sorted(range(len(det_boxes)), key=lambda i: (-det_scores[i], i))
    gt_taken = [False] * len(gt_boxes)
    pairs = []
    unmatched_dets = []
    for di in order:
        best_iou = 0.0
        best_gi = -1
        for gi in range(len(gt_boxes)):
            if gt_taken[gi]:
                continue
            if det_materials is not None and det_materials[di] != gt_materials[gi]:
                continue
            iou = iou_box(det_boxes[di], gt_boxes[gi])
            if iou >= iou_threshold and iou > best_iou:
                best_iou = iou
                best_gi = gi
        if best_gi >= 0:
            gt_taken[best_gi] = True
            pairs.append((di, best_gi, best_iou))
        else:
            unmatched_dets.append(di)
    unmatched_gts = tuple(gi for gi, taken in enumerate(gt_taken) if not taken)
    return MatchResult(tuple(pairs), tuple(unmatched_dets), unmatched_gts)


def _ap_from_flags(flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP from score-ordered TP/FP flags."""
    if n_gt == 0:
        raise ValueError("AP undefined with zero ground truths")
    tp = np.cumsum([1.0 if f else 0.0 for f in flags])
    fp = np.cumsum([0.0 if f else 1.0 for f in flags])
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    # precision envelope: monotone non-increasing from the right
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mpre[idx]))


def average_precision(
    images: Sequence[Tuple[Sequence[BBox], Sequence[float], Sequence[BBox]]],
    iou_threshold: float = 0.5,
) -> float:
    """AP over a set of images, each (det boxes, det scores, gt boxes).

    Detections are pooled across images and ranked by score; correctness is
    decided per-image by greedy matching at the IoU threshold.
    """
    records = []  # (score, image idx, det idx)
    n_gt = 0
    for img_i, (dets, scores, gts) in enumerate(images):
        n_gt += len(gts)
        match = match_detections(dets, scores, gts, iou_threshold)
        matched = {di for di, _, _ in match.pairs}
        for di, s in enumerate(scores):
            records.append((float(s), img_i, di, di in matched))
    records.sort(key=lambda r: (-r[0], r[1], r[2]))
    flags = [r[3] for r in records]
    return _ap_from_flags(flags, n_gt)


@dataclass(frozen=True)
class MapReport:
    per_category: Dict[str, float]
    mean: Optional[float]
    empty_categories: Tuple[str, ...]  # categories with detections but no GT


def map_at(
    images: Sequence[Tuple[Sequence[Detection], Sequence[Tuple[str, BBox]]]],
    iou_threshold: float = 0.5,
    by: str = "material",
) -> MapReport:
    """Per-category AP and their unweighted mean (mAP) at one IoU threshold.

    ``images`` pairs each image's detections with its GT as (category key,
    box) tuples.  Categories with no GT anywhere are excluded from the mean
    and reported separately.
    """
    keys = set()
    for dets, gts in images:
        keys.update(_det_key(d, by) for d in dets)
        keys.update(k for k, _ in gts)
    per_cat: Dict[str, float] = {}
    empty = []
    for key in sorted(keys):
        cat_images = []
        cat_gt_count = 0
        for dets, gts in images:
            dboxes = [d.bbox for d in dets if _det_key(d, by) == key]
            dscores = [d.score for d in dets if _det_key(d, by) == key]
            gboxes = [b for k, b in gts if k == key]
            cat_gt_count += len(gboxes)
            cat_images.append((dboxes, dscores, gboxes))
        if cat_gt_count == 0:
            empty.append(key)
            continue
        per_cat[key] = average_precision(cat_images, iou_threshold)
    mean = float(np.mean(list(per_cat.values()))) if per_cat else None
    return MapReport(per_cat, mean, tuple(empty))


def _det_key(det: Detection, by: str) -> str:
    if by == "material":
        return det.category.material.value
    return det.category.name


def is_correct_detection(
    det: Detection,
    gt_material: str,
    gt_box: BBox,
    iou_threshold: float = 0.5,
    require_thickness: bool = False,
    gt_thickness: Optional[str] = None,
) -> bool:
    """Correctness rule: box IoU >= threshold and material match.

    Thickness is ignored by default (layer verification is a downstream
    step) but can be required.
    """
    if det.category.material.value != gt_material:
        return False
    if require_thickness and gt_thickness is not None:
        if det.category.thickness.value != gt_thickness:
            return False
    return iou_box(det.bbox, gt_box) >= iou_threshold


def per_image_confusion(
    images: Sequence[Tuple[Sequence[Tuple[str, BBox]], Sequence[Detection]]],
    iou_threshold: float = 0.5,
    require_thickness: bool = False,
) -> ConfusionCounts:
    """Classify each image into exactly one of TP/FP/FN/TN.

    With GT present: TP if any detection is correct, else FN.  Without GT:
    FP if there is any detection at all, else TN.
    """
    tp = fp = fn = tn = 0
    for gts, dets in images:
        if gts:
            correct = any(
                is_correct_detection(d, mat, box, iou_threshold, require_thickness)
                for d in dets
                for mat, box in gts
            )
            if correct:
                tp += 1
            else:
                fn += 1
        else:
            if dets:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def precision_recall(c: ConfusionCounts) -> PrScores:
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else None
    recall = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else None
    return PrScores(precision, recall)
