"""Annotation toolchain: COCO interchange, labeling-tool loop, splits,
statistics, and the declarative training plan.

The COCO layout uses the standard images/annotations/categories sections
with category names "{material}_{thickness}" (12 categories).  The
labeling-tool interchange is a minimal list-of-records schema for round-
tripping predictions through human correction.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .core import (
    MATERIALS,
    THICKNESSES,
    BBox,
    Category,
    Detection,
    FlakescanError,
    Polygon,
    all_categories,
)

COORD_PRECISION = 6  # decimal places for serialized coordinates


class DatasetError(FlakescanError):
    pass


class ReferentialIntegrityError(DatasetError):
    pass


@dataclass(frozen=True)
class ImageEntry:
    id: int
    file_name: str
    width: int
    height: int
    material: Optional[str] = None


@dataclass(frozen=True)
class AnnotationRecord:
    id: int
    image_id: int
    category: Category
    polygon: Polygon
    bbox: BBox
    area: float


@dataclass(frozen=True)
class ParseIssue:
    record_index: int
    message: str


@dataclass(frozen=True)
class DatasetIndex:
    images: Tuple[ImageEntry, ...]
    annotations: Tuple[AnnotationRecord, ...]
    issues: Tuple[ParseIssue, ...] = ()

    def __post_init__(self):
        ids = [im.id for im in self.images]
        if len(ids) != len(set(ids)):
            raise DatasetError("duplicate image ids")
        known = set(ids)
        for ann in self.annotations:
            if ann.image_id not in known:
                raise ReferentialIntegrityError(
                    f"annotation {ann.id} references unknown image {ann.image_id}"
                )

    def annotations_for(self, image_id: int) -> List[AnnotationRecord]:
        return [a for a in self.annotations if a.image_id == image_id]


@dataclass(frozen=True)
class SplitResult:
    train: DatasetIndex
    test: DatasetIndex
    seed: int


@dataclass(frozen=True)
class TrainingStage:
    epochs: int
    learning_rate: float
    scope: str  # heads | layer4_up | all

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.scope not in ("heads", "layer4_up", "all"):
            raise ValueError(f"unknown trainable scope {self.scope!r}")


@dataclass(frozen=True)
class TrainingPlan:
    stages: Tuple[TrainingStage, ...]
    momentum: float = 0.9
    weight_decay: float = 1e-4
    iterations_per_epoch: int = 500
    source_weights: str = "coco"  # coco | coco+2dmat

    def __post_init__(self):
        if self.momentum <= 0 or self.weight_decay <= 0 or self.iterations_per_epoch <= 0:
            raise ValueError("plan hyperparameters must be positive")
        if self.source_weights not in ("coco", "coco+2dmat"):
            raise ValueError(f"unknown source weights tag {self.source_weights!r}")

    @property
    def total_iterations(self) -> int:
        return sum(s.epochs for s in self.stages) * self.iterations_per_epoch

    def to_dict(self) -> dict:
        return {
            "stages": [
                {"epochs": s.epochs, "learning_rate": s.learning_rate, "scope": s.scope}
                for s in self.stages
            ],
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "iterations_per_epoch": self.iterations_per_epoch,
            "source_weights": self.source_weights,
            "total_iterations": self.total_iterations,
        }


def _round_coords(values: Sequence[float]) -> List[float]:
    return [round(float(v), COORD_PRECISION) for v in values]


CATEGORY_IDS = {cat.name: i + 1 for i, cat in enumerate(all_categories())}


def serialize_coco(idx: DatasetIndex) -> bytes:
    doc = {
        "images": [
            {
                "id": im.id,
                "file_name": im.file_name,
                "width": im.width,
                "height": im.height,
                **({"material": im.material} if im.material else {}),
            }
            for im in idx.images
        ],
        "annotations": [
            {
                "id": a.id,
                "image_id": a.image_id,
                "category_id": CATEGORY_IDS[a.category.name],
                "segmentation": [_round_coords(a.polygon.as_flat())],
                "bbox": _round_coords(a.bbox.as_list()),
                "area": round(float(a.area), COORD_PRECISION),
                "iscrowd": 0,
            }
            for a in idx.annotations
        ],
        "categories": [
            {"id": cid, "name": name, "supercategory": name.split("_")[0]}
            for name, cid in CATEGORY_IDS.items()
        ],
    }
    return json.dumps(doc, indent=2).encode()


def parse_coco(data: bytes) -> DatasetIndex:
    """Parse a COCO document; malformed annotations are skipped and reported
    as per-record issues rather than aborting the parse."""
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise DatasetError(f"invalid JSON: {e}") from e
    for section in ("images", "annotations", "categories"):
        if section not in doc:
            raise DatasetError(f"missing {section!r} section")
    cat_names = {c["id"]: c["name"] for c in doc["categories"]}
    images = tuple(
        ImageEntry(
            id=im["id"],
            file_name=im.get("file_name", ""),
            width=im["width"],
            height=im["height"],
            material=im.get("material"),
        )
        for im in doc["images"]
    )
    image_ids = {im.id for im in images}
    annotations = []
    issues = []
    for i, a in enumerate(doc["annotations"]):
        if a["image_id"] not in image_ids:
            raise ReferentialIntegrityError(
                f"annotation {a.get('id', i)} references unknown image {a['image_id']}"
            )
        try:
            seg = a["segmentation"][0]
            poly = Polygon.from_flat(seg)
            if len(poly) < 3:
                raise ValueError("polygon has fewer than 3 vertices")
            bbox = BBox(*a["bbox"])
            cat = Category.from_name(cat_names[a["category_id"]])
            annotations.append(
                AnnotationRecord(
                    id=a["id"],
                    image_id=a["image_id"],
                    category=cat,
                    polygon=poly,
                    bbox=bbox,
                    area=float(a["area"]),
                )
            )
        except (KeyError, ValueError, TypeError) as e:
            issues.append(ParseIssue(i, str(e)))
    return DatasetIndex(images, tuple(annotations), tuple(issues))


# --- labeling-tool interchange ------------------------------------------------

def export_labeltool(
    detections: Sequence[Tuple[str, Detection]],
    source: str = "prediction",
) -> List[dict]:
    """Export (image_ref, Detection) pairs as editable label records."""
    docs = []
    for image_ref, det in detections:
        if det.mask_polygon is None:
            raise DatasetError("labeltool export requires polygon masks")
        rec = {
            "image_ref": image_ref,
            "material": det.category.material.value,
            "thickness": det.category.thickness.value,
            "polygon": [_round_coords(xy) for xy in det.mask_polygon.vertices],
            "source": source,
        }
        if source == "prediction":
            rec["score"] = round(det.score, COORD_PRECISION)
        docs.append(rec)
    return docs


def import_labeltool(docs: Sequence[dict], start_id: int = 1) -> List[Tuple[str, AnnotationRecord]]:
    """Re-import (possibly human-corrected) label records as annotations.

    Returns (image_ref, AnnotationRecord) pairs; image ids are assigned by
    first appearance of each image_ref.
    """
    out = []
    ref_ids: Dict[str, int] = {}
    for i, doc in enumerate(docs):
        material = doc["material"]
        if material not in MATERIALS:
            raise DatasetError(
                f"record {i}: unknown material {material!r}; allowed: {', '.join(MATERIALS)}"
            )
        thickness = doc.get("thickness", "mono")
        if thickness not in THICKNESSES:
            raise DatasetError(
                f"record {i}: unknown thickness {thickness!r}; allowed: {', '.join(THICKNESSES)}"
            )
        poly = Polygon(doc["polygon"])
        if len(poly) < 3:
            raise DatasetError(f"record {i}: polygon needs >= 3 vertices")
        ref = doc["image_ref"]
        image_id = ref_ids.setdefault(ref, len(ref_ids) + start_id)
        bbox = poly.bbox()
        out.append(
            (
                ref,
                AnnotationRecord(
                    id=start_id + i,
                    image_id=image_id,
                    category=Category.from_name(f"{material}_{thickness}"),
                    polygon=poly,
                    bbox=bbox,
                    area=bbox.area,
                ),
            )
        )
    return out


# --- split and statistics -----------------------------------------------------

def split_dataset(idx: DatasetIndex, train_fraction: float = 0.8, seed: int = 0) -> SplitResult:
    """Seeded per-image split; train size rounds half-up on 0.8*N."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    if len(idx.images) < 2:
        raise DatasetError("need at least 2 images to split")
    ids = sorted(im.id for im in idx.images)
    random.Random(seed).shuffle(ids)
    n_train = int(len(ids) * train_fraction + 0.5)  # round half-up
    train_ids = set(ids[:n_train])
    by_id = {im.id: im for im in idx.images}
    def subset(id_set):
        imgs = tuple(im for im in idx.images if im.id in id_set)
        anns = tuple(a for a in idx.annotations if a.image_id in id_set)
        return DatasetIndex(imgs, anns)
    all_ids = set(ids)
    return SplitResult(subset(train_ids), subset(all_ids - train_ids), seed)


def dataset_stats(idx: DatasetIndex) -> Dict[str, Tuple[int, int]]:
    """Per-material (image count, annotation count).

    Image material comes from its tag when present, else from the material
    of its annotations (an image with annotations of one material counts
    toward it).
    """
    stats: Dict[str, List[int]] = {m: [0, 0] for m in MATERIALS}
    ann_mats: Dict[int, set] = {}
    for a in idx.annotations:
        m = a.category.material.value
        stats[m][1] += 1
        ann_mats.setdefault(a.image_id, set()).add(m)
    for im in idx.images:
        mats = {im.material} if im.material else ann_mats.get(im.id, set())
        for m in mats:
            if m in stats:
                stats[m][0] += 1
    return {m: (c[0], c[1]) for m, c in stats.items()}


# --- training plan ------------------------------------------------------------

DEFAULT_STAGES = (
    TrainingStage(30, 1e-3, "heads"),
    TrainingStage(30, 1e-3, "layer4_up"),
    TrainingStage(30, 1e-4, "all"),
    TrainingStage(30, 1e-5, "all"),
)


def emit_training_plan(
    source_weights: str = "coco",
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
    iterations_per_epoch: int = 500,
    stages: Optional[Sequence[TrainingStage]] = None,
) -> TrainingPlan:
    """Default schedule: 4 stages x 30 epochs, LRs 1e-3/1e-3/1e-4/1e-5,
    scopes heads/layer4_up/all/all, SGD momentum 0.9, weight decay 1e-4,
    500 iterations per epoch."""
    return TrainingPlan(
        stages=tuple(stages) if stages is not None else DEFAULT_STAGES,
        momentum=momentum,
        weight_decay=weight_decay,
        iterations_per_epoch=iterations_per_epoch,
        source_weights=source_weights,
    )
