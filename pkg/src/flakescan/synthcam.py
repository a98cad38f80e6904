"""Synthetic microscope: chip scenes, tile renderer, virtual motorized stage.

A ChipScene scatters convex-ish flake polygons over a chip extent in
micrometres.  render_tile produces the camera view at a stage position under
a parametric illumination model together with pixel-space ground truth.  The
color model is deliberately simple: each flake darkens the background by a
per-material, per-channel contrast proportional to its layer count
(saturating at 40 layers), and global illumination scales every pixel
identically so illumination experiments are exact up to quantization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull
from shapely.geometry import Polygon as ShapelyPolygon, box as shapely_box

from .core import (
    MAX_LAYERS,
    BBox,
    Category,
    FlakescanError,
    Material,
    Polygon,
    rasterize_polygon,
    thickness_category,
)

NOMINAL_INTENSITY = 220.0
DEFAULT_BACKGROUND = (170.0, 110.0, 200.0)  # SiO2/Si purple-ish, (R, G, B)
NOISE_SIGMA = 2.0

# Per-layer fractional darkening per channel, saturating at MAX_LAYERS.
MATERIAL_CONTRAST: Dict[str, Tuple[float, float, float]] = {
    "graphene": (0.004, 0.006, 0.010),
    "hBN": (0.002, 0.004, 0.007),
    "MoS2": (0.006, 0.009, 0.012),
    "WTe2": (0.005, 0.008, 0.011),
}


class SceneError(FlakescanError):
    pass


class MotionError(FlakescanError):
    pass


@dataclass(frozen=True)
class Flake:
    polygon_um: Polygon
    material: Material
    layers: int

    def __post_init__(self):
        object.__setattr__(self, "material", Material(self.material))
        if self.layers < 1:
            raise SceneError(f"layer count must be >= 1, got {self.layers}")

    @property
    def category(self) -> Category:
        return Category(self.material, thickness_category(self.layers))


@dataclass(frozen=True)
class ChipScene:
    chip_id: str
    extent_um: Tuple[float, float]
    flakes: Tuple[Flake, ...]
    background: Tuple[float, float, float] = DEFAULT_BACKGROUND
    seed: int = 0


@dataclass(frozen=True)
class OpticsConfig:
    fov_um: Tuple[float, float] = (256.0, 256.0)
    sensor_px: Tuple[int, int] = (1024, 1024)
    objective: str = "50x"
    autofocus_latency_ms: float = 0.0
    capture_latency_ms: float = 0.0

    @property
    def um_per_px(self) -> float:
        ux = self.fov_um[0] / self.sensor_px[0]
        uy = self.fov_um[1] / self.sensor_px[1]
        if not math.isclose(ux, uy):
            raise ValueError("anisotropic pixels not supported")
        return ux


@dataclass(frozen=True)
class IlluminationSetting:
    intensity: float = NOMINAL_INTENSITY
    color_balance: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.intensity <= 0 or any(g <= 0 for g in self.color_balance):
            raise ValueError("intensity and gains must be positive")


@dataclass(frozen=True)
class SceneSpec:
    extent_um: Tuple[float, float] = (10_000.0, 10_000.0)  # 1x1 cm
    density_per_cm2: float = 25.0
    materials: Tuple[str, ...] = ("WTe2",)
    layer_range: Tuple[int, int] = (1, 20)
    radius_range_um: Tuple[float, float] = (8.0, 40.0)
    background: Tuple[float, float, float] = DEFAULT_BACKGROUND


def generate_chip(spec: SceneSpec, seed: int = 0, chip_id: str = "chip-0") -> ChipScene:
    """Deterministic scene synthesis: flake count is density x area, centers
    uniform, shapes convex hulls of random points in a disc.  Flakes are
    placed with non-overlapping bounding discs; dense specs that cannot be
    placed within bounded retries raise."""
    rng = np.random.default_rng(seed)
    w_um, h_um = spec.extent_um
    area_cm2 = (w_um / 10_000.0) * (h_um / 10_000.0)
    n = int(round(spec.density_per_cm2 * area_cm2))
    placed: List[Tuple[float, float, float]] = []  # (cx, cy, r)
    flakes: List[Flake] = []
    for _ in range(n):
        for attempt in range(200):
            r = float(rng.uniform(*spec.radius_range_um))
            cx = float(rng.uniform(r, w_um - r))
            cy = float(rng.uniform(r, h_um - r))
            if all((cx - px) ** 2 + (cy - py) ** 2 >= (r + pr) ** 2 for px, py, pr in placed):
                break
        else:
            raise SceneError(f"could not place flake {len(flakes)} without overlap")
        placed.append((cx, cy, r))
        n_pts = int(rng.integers(8, 14))
        angles = rng.uniform(0, 2 * math.pi, size=n_pts)
        radii = rng.uniform(0.5 * r, r, size=n_pts)
        pts = np.column_stack(
            (cx + radii * np.cos(angles), cy + radii * np.sin(angles))
        )
        hull = ConvexHull(pts)
        verts = [tuple(pts[i]) for i in hull.vertices]
        material = Material(str(rng.choice(spec.materials)))
        layers = int(rng.integers(spec.layer_range[0], spec.layer_range[1] + 1))
        flakes.append(Flake(Polygon(verts), material, layers))
    return ChipScene(chip_id, spec.extent_um, tuple(flakes), spec.background, seed)


@dataclass(frozen=True)
class TileAnnotation:
    """Ground truth for one flake visible in a rendered tile."""

    flake_index: int
    material: Material
    layers: int
    category: Category
    polygon_px: Polygon
    bbox_px: BBox


def _tile_noise_rng(scene_seed: int, x_um: float, y_um: float) -> np.random.Generator:
    return np.random.default_rng(
        (scene_seed, int(round(x_um * 1000)), int(round(y_um * 1000)))
    )


def render_tile(
    scene: ChipScene,
    position_um: Tuple[float, float],
    optics: OpticsConfig = OpticsConfig(),
    illum: IlluminationSetting = IlluminationSetting(),
    min_visible_area_px: float = 16.0,
) -> Tuple[np.ndarray, List[TileAnnotation]]:
    """Render the FOV whose top-left corner sits at the stage position.

    Pixel model: (background x flake factor + seeded gaussian noise)
    x (I / 220) x channel gain, rounded and clipped to uint8.  Ground truth
    lists every flake polygon clipped to the tile with at least the minimum
    visible area.
    """
    x0, y0 = position_um
    w_px, h_px = optics.sensor_px
    upp = optics.um_per_px
    signal = np.empty((h_px, w_px, 3), dtype=np.float64)
    for c in range(3):
        signal[:, :, c] = scene.background[c]

    tile_rect = shapely_box(x0, y0, x0 + optics.fov_um[0], y0 + optics.fov_um[1])
    annotations: List[TileAnnotation] = []
    for fi, flake in enumerate(scene.flakes):
        fb = flake.polygon_um.bbox()
        if (
            fb.x + fb.w < x0
            or fb.y + fb.h < y0
            or fb.x > x0 + optics.fov_um[0]
            or fb.y > y0 + optics.fov_um[1]
        ):
            continue
        clipped = ShapelyPolygon(flake.polygon_um.vertices).intersection(tile_rect)
        if clipped.is_empty or clipped.area / (upp * upp) < min_visible_area_px:
            continue
        if clipped.geom_type == "MultiPolygon":
            clipped = max(clipped.geoms, key=lambda g: g.area)
        verts_px = [
            ((vx - x0) / upp, (vy - y0) / upp) for vx, vy in clipped.exterior.coords[:-1]
        ]
        poly_px = Polygon(verts_px)
        # rasterize only inside the polygon's pixel bbox; flakes are tiny
        # relative to the sensor
        pb = poly_px.bbox()
        ix0 = max(0, int(math.floor(pb.x)))
        iy0 = max(0, int(math.floor(pb.y)))
        ix1 = min(w_px, int(math.ceil(pb.x + pb.w)) + 1)
        iy1 = min(h_px, int(math.ceil(pb.y + pb.h)) + 1)
        if ix1 <= ix0 or iy1 <= iy0:
            continue
        local = Polygon([(vx - ix0, vy - iy0) for vx, vy in verts_px])
        sub = rasterize_polygon(local, ix1 - ix0, iy1 - iy0)
        if sub.count() < min_visible_area_px:
            continue
        contrast = MATERIAL_CONTRAST[flake.material.value]
        layer_factor = min(flake.layers, MAX_LAYERS)
        region = signal[iy0:iy1, ix0:ix1, :]
        for c in range(3):
            factor = max(0.0, 1.0 - contrast[c] * layer_factor)
            region[:, :, c] = np.where(sub.bits, region[:, :, c] * factor, region[:, :, c])
        annotations.append(
            TileAnnotation(fi, flake.material, flake.layers, flake.category, poly_px, poly_px.bbox())
        )

    rng = _tile_noise_rng(scene.seed, x0, y0)
    noise = rng.normal(0.0, NOISE_SIGMA, size=signal.shape)
    gains = np.asarray(illum.color_balance)
    scale = illum.intensity / NOMINAL_INTENSITY
    image = (signal + noise) * scale * gains[None, None, :]
    return np.clip(np.round(image), 0, 255).astype(np.uint8), annotations


# --- virtual stage ------------------------------------------------------------

@dataclass
class StageState:
    position_um: Tuple[float, float] = (0.0, 0.0)
    limits_um: Tuple[float, float] = (10_000.0, 10_000.0)
    fixed_latency_ms: float = 50.0
    latency_ms_per_mm: float = 100.0


def stage_move(state: StageState, target_um: Tuple[float, float]) -> Tuple[StageState, float]:
    """Move to target; elapsed = fixed + per-mm x distance.  Out-of-limits
    targets raise and leave the state unchanged."""
    tx, ty = target_um
    if not (0.0 <= tx <= state.limits_um[0] and 0.0 <= ty <= state.limits_um[1]):
        raise MotionError(f"target {target_um} outside stage limits {state.limits_um}")
    dist_mm = math.hypot(tx - state.position_um[0], ty - state.position_um[1]) / 1000.0
    elapsed = state.fixed_latency_ms + state.latency_ms_per_mm * dist_mm
    new_state = replace(state, position_um=(tx, ty))
    return new_state, elapsed


def stage_autofocus(optics: OpticsConfig) -> float:
    return optics.autofocus_latency_ms


def load_scene_spec(path) -> SceneSpec:
    with open(path) as f:
        d = json.load(f)
    return SceneSpec(
        extent_um=tuple(d.get("extent_um", (10_000.0, 10_000.0))),
        density_per_cm2=d.get("density_per_cm2", 25.0),
        materials=tuple(d.get("materials", ("WTe2",))),
        layer_range=tuple(d.get("layer_range", (1, 20))),
        radius_range_um=tuple(d.get("radius_range_um", (8.0, 40.0))),
        background=tuple(d.get("background", DEFAULT_BACKGROUND)),
    )
