"""On-line augmentation and model-input normalization.

Images are HxWx3 uint8 arrays.  Geometric ops are restricted to exact pixel
permutations (flips, 90-degree rotations, integer shifts) so annotation
polygons transform without loss; resize_pad carries an invertible Transform
for mapping detections back to native coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .core import BBox, Detection, FlakescanError, Polygon


class AugmentError(FlakescanError):
    pass


@dataclass(frozen=True)
class Transform:
    """Forward map from native to padded-square model input coordinates."""

    scale: float
    pad_left: int
    pad_top: int
    original_w: int
    original_h: int
    target: int

    def apply_point(self, x: float, y: float) -> Tuple[float, float]:
        return x * self.scale + self.pad_left, y * self.scale + self.pad_top

    def invert_point(self, x: float, y: float) -> Tuple[float, float]:
        return (x - self.pad_left) / self.scale, (y - self.pad_top) / self.scale


def resize_pad(image: np.ndarray, target: int = 1024) -> Tuple[np.ndarray, Transform]:
    """Scale by target/max(w, h) with bilinear resampling, then center-pad
    the short axis with zeros to a target x target square."""
    if image.ndim not in (2, 3) or image.shape[0] == 0 or image.shape[1] == 0:
        raise AugmentError(f"bad image shape {image.shape}")
    h, w = image.shape[:2]
    scale = target / max(w, h)
    new_w = int(round(w * scale))
    new_h = int(round(h * scale))
    resized = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    pad_left = (target - new_w) // 2
    pad_top = (target - new_h) // 2
    if image.ndim == 3:
        out = np.zeros((target, target, image.shape[2]), dtype=image.dtype)
        out[pad_top : pad_top + new_h, pad_left : pad_left + new_w, :] = resized
    else:
        out = np.zeros((target, target), dtype=image.dtype)
        out[pad_top : pad_top + new_h, pad_left : pad_left + new_w] = resized
    return out, Transform(scale, pad_left, pad_top, w, h, target)


def inverse_transform(det: Detection, t: Transform) -> Detection:
    """Map a detection from padded-frame coordinates back to the native
    image.  A detection entirely inside the padding region is rejected as a
    padding artifact."""
    b = det.bbox
    x0, y0 = t.invert_point(b.x, b.y)
    w = b.w / t.scale
    h = b.h / t.scale
    if x0 + w <= 0 or y0 + h <= 0 or x0 >= t.original_w or y0 >= t.original_h:
        raise AugmentError("detection lies entirely inside the padding region")
    poly = None
    if det.mask_polygon is not None:
        poly = Polygon([t.invert_point(x, y) for x, y in det.mask_polygon.vertices])
    return replace(det, bbox=BBox(x0, y0, w, h), mask_polygon=poly)


@dataclass(frozen=True)
class AugmentConfig:
    channel_gain_range: Tuple[float, float] = (0.8, 1.2)
    rotation_set: Tuple[int, ...] = (90, 180, 270)
    flip_horizontal_p: float = 0.5
    flip_vertical_p: float = 0.5
    shift_range: Tuple[int, int] = (-64, 64)  # px, per axis
    channel_gain_p: float = 0.5
    rotation_p: float = 0.5
    shift_p: float = 0.5

    def __post_init__(self):
        for p in (self.flip_horizontal_p, self.flip_vertical_p, self.channel_gain_p,
                  self.rotation_p, self.shift_p):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if any(r % 90 != 0 for r in self.rotation_set):
            raise ValueError("rotations must be multiples of 90 degrees")
        if self.channel_gain_range[0] > self.channel_gain_range[1]:
            raise ValueError("invalid gain range")
        if self.shift_range[0] > self.shift_range[1]:
            raise ValueError("invalid shift range")


@dataclass(frozen=True)
class AugmentedAnnotation:
    polygon: Polygon
    bbox: BBox


def _flip_h_poly(poly: Polygon, w: int) -> Polygon:
    return Polygon([(w - x, y) for x, y in poly.vertices])


def _flip_v_poly(poly: Polygon, h: int) -> Polygon:
    return Polygon([(x, h - y) for x, y in poly.vertices])


def _rot90_poly(poly: Polygon, w: int, h: int, times: int) -> Polygon:
    """Rotate counter-clockwise by 90*times within an image of size (w, h)
    at rotation step 0; dimensions swap on odd steps."""
    verts = list(poly.vertices)
    cw, ch = w, h
    for _ in range(times % 4):
        verts = [(y, cw - x) for x, y in verts]
        cw, ch = ch, cw
    return Polygon(verts)


def _shift_poly(poly: Polygon, dx: int, dy: int) -> Polygon:
    return Polygon([(x + dx, y + dy) for x, y in poly.vertices])


def augment(
    image: np.ndarray,
    polygons: Sequence[Polygon],
    cfg: AugmentConfig = AugmentConfig(),
    seed: int = 0,
) -> Tuple[np.ndarray, List[AugmentedAnnotation], List[int]]:
    """Apply each enabled op independently with its probability.

    Returns (image, transformed annotations, dropped annotation indices);
    an annotation is dropped when a shift moves it fully out of frame.
    Deterministic for a fixed (input, config, seed).
    """
    rng = np.random.default_rng(seed)
    img = image.copy()
    polys = list(polygons)
    h, w = img.shape[:2]

    if rng.random() < cfg.channel_gain_p:
        gains = rng.uniform(*cfg.channel_gain_range, size=3)
        img = np.clip(img.astype(np.float64) * gains[None, None, :], 0, 255)
        img = img.round().astype(image.dtype)

    if cfg.rotation_set and rng.random() < cfg.rotation_p:
        angle = int(rng.choice(cfg.rotation_set))
        times = (angle // 90) % 4
        img = np.rot90(img, k=times)
        polys = [_rot90_poly(p, w, h, times) for p in polys]
        if times % 2 == 1:
            h, w = w, h

    if rng.random() < cfg.flip_horizontal_p:
        img = img[:, ::-1].copy()
        polys = [_flip_h_poly(p, w) for p in polys]

    if rng.random() < cfg.flip_vertical_p:
        img = img[::-1, :].copy()
        polys = [_flip_v_poly(p, h) for p in polys]

    dropped: List[int] = []
    if rng.random() < cfg.shift_p:
        dx = int(rng.integers(cfg.shift_range[0], cfg.shift_range[1] + 1))
        dy = int(rng.integers(cfg.shift_range[0], cfg.shift_range[1] + 1))
        shifted = np.zeros_like(img)
        src_x0, dst_x0 = max(0, -dx), max(0, dx)
        src_y0, dst_y0 = max(0, -dy), max(0, dy)
        span_x = w - abs(dx)
        span_y = h - abs(dy)
        if span_x > 0 and span_y > 0:
            shifted[dst_y0 : dst_y0 + span_y, dst_x0 : dst_x0 + span_x] = img[
                src_y0 : src_y0 + span_y, src_x0 : src_x0 + span_x
            ]
        img = shifted
        new_polys = []
        for i, p in enumerate(polys):
            sp = _shift_poly(p, dx, dy)
            b = sp.bbox()
            if b.x + b.w <= 0 or b.y + b.h <= 0 or b.x >= w or b.y >= h:
                dropped.append(i)
                new_polys.append(None)
            else:
                new_polys.append(sp)
        polys = new_polys

    anns = [
        AugmentedAnnotation(p, p.bbox())
        for p in polys
        if p is not None
    ]
    return img, anns, dropped
