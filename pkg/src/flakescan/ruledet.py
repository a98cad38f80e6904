"""Rule-based baseline detector: contrast windows + connected components.

Calibrated once against a reference background color, a pixel is foreground
when every channel's fractional contrast (ref - pixel) / ref lies inside its
configured window; 4-connected components within area bounds become
detections.  The absolute reference makes the detector deliberately fragile
to illumination changes, which is the behavior the baseline exists to show.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .core import (
    BBox,
    BitMask,
    Category,
    Detection,
    FlakescanError,
    bbox_from_mask,
    rle_encode,
)


class RuleParamsError(FlakescanError):
    pass


@dataclass(frozen=True)
class RuleParams:
    reference_color: Tuple[float, float, float]  # per-channel background intensity
    contrast_windows: Tuple[Tuple[float, float], ...]  # per-channel (min, max)
    min_area: int
    max_area: int
    category: Category
    connectivity: int = 4

    def __post_init__(self):
        if len(self.contrast_windows) != 3:
            raise RuleParamsError("need one contrast window per channel")
        for lo, hi in self.contrast_windows:
            if not (-1.0 <= lo < hi <= 1.0):
                raise RuleParamsError(f"invalid contrast window ({lo}, {hi})")
        if not 0 < self.min_area < self.max_area:
            raise RuleParamsError("areas must satisfy 0 < min < max")
        if self.connectivity not in (4, 8):
            raise RuleParamsError("connectivity must be 4 or 8")

    def to_dict(self) -> dict:
        return {
            "reference_color": list(self.reference_color),
            "contrast_windows": [list(w) for w in self.contrast_windows],
            "min_area": self.min_area,
            "max_area": self.max_area,
            "category": self.category.name,
            "connectivity": self.connectivity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RuleParams":
        return cls(
            reference_color=tuple(d["reference_color"]),
            contrast_windows=tuple(tuple(w) for w in d["contrast_windows"]),
            min_area=d["min_area"],
            max_area=d["max_area"],
            category=Category.from_name(d["category"]),
            connectivity=d.get("connectivity", 4),
        )

    @classmethod
    def load(cls, path) -> "RuleParams":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def estimate_background(image: np.ndarray) -> Tuple[float, ...]:
    """Per-channel intensity histogram mode (bin width 1)."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    modes = []
    for c in range(img.shape[2]):
        hist = np.bincount(img[:, :, c].astype(np.int64).ravel().clip(0, 255), minlength=256)
        modes.append(float(np.argmax(hist)))
    return tuple(modes)


def detect_rule_based(image: np.ndarray, params: RuleParams) -> List[Detection]:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
    ref = np.asarray(params.reference_color, dtype=np.float64)
    contrast = (ref[None, None, :] - img) / ref[None, None, :]
    fg = np.ones(img.shape[:2], dtype=bool)
    for c, (lo, hi) in enumerate(params.contrast_windows):
        fg &= (contrast[:, :, c] >= lo) & (contrast[:, :, c] <= hi)
    structure = (
        ndimage.generate_binary_structure(2, 1)
        if params.connectivity == 4
        else ndimage.generate_binary_structure(2, 2)
    )
    labels, n = ndimage.label(fg, structure=structure)
    detections: List[Detection] = []
    for comp in range(1, n + 1):
        comp_mask = labels == comp
        area = int(comp_mask.sum())
        if not params.min_area <= area <= params.max_area:
            continue
        mask = BitMask(comp_mask)
        detections.append(
            Detection(
                category=params.category,
                score=1.0,
                bbox=bbox_from_mask(mask),
                mask_rle=rle_encode(mask),
            )
        )
    return detections
