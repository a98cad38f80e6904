"""Geometric and categorical primitives shared by the whole pipeline.

Masks are boolean numpy grids, polygons are float vertex lists in pixel
coordinates, and the category taxonomy is the closed material x thickness
product used everywhere downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

MATERIALS = ("graphene", "hBN", "MoS2", "WTe2")
THICKNESSES = ("mono", "few", "thick")

# Layer-count boundaries of the thickness taxonomy.  The 10-layer boundary is
# assigned to "few" (lower category wins); MAX_LAYERS caps the taxonomy.
FEW_MIN = 2
FEW_MAX = 10
MAX_LAYERS = 40


class FlakescanError(Exception):
    """Base class for library errors."""


class DegeneratePolygonError(FlakescanError):
    pass


class MalformedRleError(FlakescanError):
    pass


class EmptyMaskError(FlakescanError):
    pass


class TaxonomyError(FlakescanError):
    pass


class Material(str, Enum):
    graphene = "graphene"
    hBN = "hBN"
    MoS2 = "MoS2"
    WTe2 = "WTe2"


class Thickness(str, Enum):
    mono = "mono"
    few = "few"
    thick = "thick"


@dataclass(frozen=True)
class Category:
    material: Material
    thickness: Thickness

    def __post_init__(self):
        object.__setattr__(self, "material", Material(self.material))
        object.__setattr__(self, "thickness", Thickness(self.thickness))

    @property
    def name(self) -> str:
        return f"{self.material.value}_{self.thickness.value}"

    @classmethod
    def from_name(cls, name: str) -> "Category":
        material, _, thickness = name.partition("_")
        return cls(Material(material), Thickness(thickness))


def all_categories() -> list:
    """Closed list of the 12 material x thickness categories."""
    return [Category(Material(m), Thickness(t)) for m in MATERIALS for t in THICKNESSES]


def thickness_category(layers: int) -> Thickness:
    """Map a layer count onto the mono/few/thick taxonomy.

    1 layer is mono, 2-10 few, 11-40 thick.  Counts above 40 are outside
    the taxonomy and rejected rather than silently bucketed.
    """
    layers = int(layers)
    if layers < 1:
        raise TaxonomyError(f"layer count must be >= 1, got {layers}")
    if layers > MAX_LAYERS:
        raise TaxonomyError(f"layer count {layers} exceeds taxonomy maximum {MAX_LAYERS}")
    if layers == 1:
        return Thickness.mono
    if layers <= FEW_MAX:
        return Thickness.few
    return Thickness.thick


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner plus extents, pixel floats."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative box extents: w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Polygon:
    """Ordered vertex ring, pixel coordinates."""

    vertices: Tuple[Tuple[float, float], ...]

    def __init__(self, vertices: Sequence[Sequence[float]]):
        verts = tuple((float(x), float(y)) for x, y in vertices)
        if not all(np.isfinite(v) for xy in verts for v in xy):
            raise ValueError("polygon has non-finite coordinates")
        object.__setattr__(self, "vertices", verts)

    def __len__(self):
        return len(self.vertices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def as_flat(self) -> list:
        return [c for xy in self.vertices for c in xy]

    @classmethod
    def from_flat(cls, flat: Sequence[float]) -> "Polygon":
        it = iter(flat)
        return cls(list(zip(it, it)))

    def bbox(self) -> BBox:
        arr = self.as_array()
        x0, y0 = arr.min(axis=0)
        x1, y1 = arr.max(axis=0)
        return BBox(float(x0), float(y0), float(x1 - x0), float(y1 - y0))


class BitMask:
    """Binary occupancy grid, row-major, shape (height, width)."""

    __slots__ = ("bits",)

    def __init__(self, bits: np.ndarray):
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"mask must be a 2D grid, got shape {bits.shape}")
        self.bits = bits

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BitMask)
            and self.bits.shape == other.bits.shape
            and bool(np.array_equal(self.bits, other.bits))
        )

    @classmethod
    def zeros(cls, width: int, height: int) -> "BitMask":
        return cls(np.zeros((height, width), dtype=bool))


@dataclass(frozen=True)
class Rle:
    """Row-major run-length encoding.

    ``counts`` alternates zero-run / one-run lengths starting with the
    leading zero run, which may be 0.  Canonical form has no zero-length
    interior runs.
    """

    width: int
    height: int
    counts: Tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise MalformedRleError("negative run length")
        if any(c == 0 for c in counts[1:]):
            raise MalformedRleError("zero-length interior run")
        if sum(counts) != self.width * self.height:
            raise MalformedRleError(
                f"run lengths sum to {sum(counts)}, expected {self.width * self.height}"
            )


def rle_encode(mask: BitMask) -> Rle:
    flat = mask.bits.ravel()
    n = flat.size
    # boundaries between runs of equal value
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change))
    lengths = np.diff(np.concatenate((starts, [n])))
    counts = list(lengths)
    if flat[0]:
        counts.insert(0, 0)  # leading zero-run convention
    return Rle(mask.width, mask.height, tuple(int(c) for c in counts))


def rle_decode(rle: Rle) -> BitMask:
    flat = np.zeros(rle.width * rle.height, dtype=bool)
    pos = 0
    value = False
    for count in rle.counts:
        if value:
            flat[pos : pos + count] = True
        pos += count
        value = not value
    return BitMask(flat.reshape(rle.height, rle.width))


def rasterize_polygon(poly: Polygon, width: int, height: int) -> BitMask:
    """Rasterize by pixel-center containment under the even-odd rule.

    Pixel (i, j) is set iff its center (i + 0.5, j + 0.5) lies strictly
    inside the polygon; the half-open crossing test resolves boundary ties.
    """
    if len(poly) < 3:
        raise DegeneratePolygonError(f"polygon needs >= 3 vertices, got {len(poly)}")
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be >= 1")
    verts = poly.as_array()
    cx = np.arange(width) + 0.5
    cy = np.arange(height) + 0.5
    px, py = np.meshgrid(cx, cy)
    inside = np.zeros((height, width), dtype=bool)
    n = len(verts)
    for k in range(n):
        x1, y1 = verts[k]
        x2, y2 = verts[(k + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        x_at = (x2 - x1) * (py - y1) / (y2 - y1) + x1
        inside ^= crosses & (px < x_at)
    return BitMask(inside)


def bbox_from_mask(mask: BitMask) -> BBox:
    """Tightest integer-aligned box containing every set pixel."""
    rows = np.flatnonzero(mask.bits.any(axis=1))
    cols = np.flatnonzero(mask.bits.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError("cannot box an empty mask")
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return BBox(float(x0), float(y0), float(x1 - x0 + 1), float(y1 - y0 + 1))


@dataclass(frozen=True)
class Detection:
    """One detected flake: category, confidence, box, and mask geometry."""

    category: Category
    score: float
    bbox: BBox
    mask_polygon: Optional[Polygon] = None
    mask_rle: Optional[Rle] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.mask_polygon is None and self.mask_rle is None:
            raise ValueError("detection needs a polygon or RLE mask")

    def mask_as_bitmask(self, width: int, height: int) -> BitMask:
        if self.mask_rle is not None:
            return rle_decode(self.mask_rle)
        return rasterize_polygon(self.mask_polygon, width, height)
