"""Scan orchestration: snake tile plans, capture->infer->record pipeline,
coordinate transforms, cross-tile dedupe, throughput accounting.

Time is simulated: per-tile latencies (stage motion, autofocus, capture,
transfer+infer, record) accumulate into a virtual clock, so a full-chip scan
runs in seconds while reporting the wall-clock and fps the physical system
would see.  Scans are resumable: progress persists in the catalog after
every tile, and the idempotent upsert makes interrupted + resumed runs
converge on the same catalog as an uninterrupted one.
"""

from __future__ import annotations

import math
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .catalog import CatalogStore, FlakeRecord
from .core import BBox, Detection, FlakescanError, Polygon
from .metrics import iou_box
from .protocol import InferRequest, TransportError, check_health, client_infer
from .synthcam import (
    ChipScene,
    IlluminationSetting,
    OpticsConfig,
    StageState,
    render_tile,
    stage_autofocus,
    stage_move,
)


class ScanError(FlakescanError):
    pass


@dataclass(frozen=True)
class TilePlan:
    positions_um: Tuple[Tuple[float, float], ...]
    fov_um: Tuple[float, float]
    overlap: float
    grid: Tuple[int, int]  # (nx, ny)

    def __len__(self):
        return len(self.positions_um)


def plan_tiles(
    region_um: Tuple[float, float],
    fov_um: Tuple[float, float],
    overlap: float = 0.1,
) -> TilePlan:
    """Boustrophedon plan covering the region.

    Per axis: step = fov * (1 - overlap), n = ceil((extent - fov) / step) + 1;
    the last row/column is clamped so no tile leaves the region.
    """
    if not 0.0 <= overlap <= 0.5:
        raise ScanError(f"overlap must be in [0, 0.5], got {overlap}")
    if fov_um[0] > region_um[0] or fov_um[1] > region_um[1]:
        raise ScanError("fov exceeds region")

    def axis(extent: float, fov: float) -> Tuple[int, float]:
        step = fov * (1.0 - overlap)
        if extent == fov:
            return 1, step
        n = math.ceil((extent - fov) / step) + 1
        return n, step

    nx, step_x = axis(region_um[0], fov_um[0])
    ny, step_y = axis(region_um[1], fov_um[1])
    positions = []
    for j in range(ny):
        y = min(j * step_y, region_um[1] - fov_um[1])
        cols = range(nx) if j % 2 == 0 else range(nx - 1, -1, -1)
        for i in cols:
            x = min(i * step_x, region_um[0] - fov_um[0])
            positions.append((x, y))
    return TilePlan(tuple(positions), fov_um, overlap, (nx, ny))


def pixel_to_stage(
    px: Tuple[float, float], tile_origin_um: Tuple[float, float], um_per_px: float
) -> Tuple[float, float]:
    """Tile-local pixel -> chip-global µm; stage position is the tile's
    top-left corner, +x right, +y down."""
    return tile_origin_um[0] + px[0] * um_per_px, tile_origin_um[1] + px[1] * um_per_px


def stage_to_pixel(
    um: Tuple[float, float], tile_origin_um: Tuple[float, float], um_per_px: float
) -> Tuple[float, float]:
    return (um[0] - tile_origin_um[0]) / um_per_px, (um[1] - tile_origin_um[1]) / um_per_px


# --- dedupe -------------------------------------------------------------------

def dedupe(records: Sequence[FlakeRecord], iou_threshold: float = 0.3) -> List[FlakeRecord]:
    """Merge duplicate sightings of one physical flake from overlapping
    tiles: same material + µm-space box IoU >= threshold, or one box mostly
    contained in the other (a corner sliver of a flake clipped by a tile
    edge has low IoU against the full sighting but sits inside its box).
    Implemented as connected components over the match graph with a
    canonical ordering, so the result is independent of tile order; the
    highest-confidence record (ties by position) represents each component.
    """
    recs = sorted(records, key=lambda r: (r.chip_id, r.centroid_um[1], r.centroid_um[0], r.flake_id))
    n = len(recs)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    for i in range(n):
        for j in range(i + 1, n):
            if recs[i].material != recs[j].material:
                continue
            a, b = recs[i].bbox_um, recs[j].bbox_um
            iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
            ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
            inter = max(iw, 0.0) * max(ih, 0.0)
            min_area = min(a.area, b.area)
            contained = min_area > 0 and inter / min_area >= 0.5
            if contained or iou_box(a, b) >= iou_threshold:
                union(i, j)
    groups: Dict[int, List[FlakeRecord]] = {}
    for i, r in enumerate(recs):
        groups.setdefault(find(i), []).append(r)
    out = []
    for root in sorted(groups):
        members = groups[root]
        best = max(
            members,
            key=lambda r: (r.score, r.bbox_um.area, -r.centroid_um[1], -r.centroid_um[0]),
        )
        out.append(best)
    return out


# --- scan control -------------------------------------------------------------

class ScanController:
    """Asynchronous pause/resume/abort and live threshold adjustment."""

    def __init__(self, threshold: float = 0.5):
        self._lock = threading.Lock()
        self._state = "running"
        self._threshold = threshold

    @property
    def state(self) -> str:
        with self._lock:
            return self._state

    @property
    def threshold(self) -> float:
        with self._lock:
            return self._threshold

    def pause(self):
        with self._lock:
            if self._state == "running":
                self._state = "paused"

    def resume(self):
        with self._lock:
            if self._state == "paused":
                self._state = "running"

    def abort(self):
        with self._lock:
            self._state = "aborted"

    def set_threshold(self, value: float):
        if not 0.0 <= value <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        with self._lock:
            self._threshold = value


@dataclass
class LatencyModel:
    """Simulated per-tile overheads in ms; stage motion adds its own."""

    autofocus_ms: float = 0.0
    capture_ms: float = 0.0
    transfer_ms: float = 0.0
    record_ms: float = 0.0
    infer_override_ms: Optional[float] = None  # replaces server-reported timing


@dataclass
class ScanPolicy:
    confidence_threshold: float = 0.5
    tile_retries: int = 2
    dedupe_iou: float = 0.3
    pipeline: bool = False
    min_visible_area_px: float = 16.0
    latency: LatencyModel = field(default_factory=LatencyModel)
    stage_fixed_ms: float = 50.0
    stage_ms_per_mm: float = 100.0
    thumbnails: bool = False
    real_sleep: bool = False  # sleep simulated latencies in real time


@dataclass(frozen=True)
class TileJob:
    tile_id: str
    index: int
    position_um: Tuple[float, float]
    state: str  # pending | captured | inferred | recorded | failed
    latencies_ms: Dict[str, float] = field(default_factory=dict)
    detections: Tuple[Detection, ...] = ()


@dataclass
class ScanReport:
    scan_id: str
    chip_id: str
    tiles_total: int
    tiles_completed: int
    tiles_failed: int
    flakes_cataloged: int
    wall_clock_s: float
    effective_fps: float
    stage_totals_ms: Dict[str, float]
    threshold_changes: List[Tuple[int, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "scan_id": self.scan_id,
            "chip_id": self.chip_id,
            "tiles_total": self.tiles_total,
            "tiles_completed": self.tiles_completed,
            "tiles_failed": self.tiles_failed,
            "flakes_cataloged": self.flakes_cataloged,
            "wall_clock_s": self.wall_clock_s,
            "effective_fps": self.effective_fps,
            "stage_totals_ms": self.stage_totals_ms,
            "threshold_changes": [list(t) for t in self.threshold_changes],
        }


class SceneSource:
    """Capture source backed by the synthetic camera."""

    def __init__(
        self,
        scene: ChipScene,
        optics: OpticsConfig = OpticsConfig(),
        illum: IlluminationSetting = IlluminationSetting(),
    ):
        self.scene = scene
        self.optics = optics
        self.illum = illum

    def capture(self, position_um: Tuple[float, float], min_visible_area_px: float):
        return render_tile(
            self.scene, position_um, self.optics, self.illum, min_visible_area_px
        )


def _detection_to_record(
    det: Detection,
    chip_id: str,
    tile_id: str,
    tile_origin_um: Tuple[float, float],
    um_per_px: float,
) -> FlakeRecord:
    b = det.bbox
    x0, y0 = pixel_to_stage((b.x, b.y), tile_origin_um, um_per_px)
    bbox_um = BBox(x0, y0, b.w * um_per_px, b.h * um_per_px)
    centroid = (x0 + bbox_um.w / 2.0, y0 + bbox_um.h / 2.0)
    poly = det.mask_polygon
    if poly is None:
        # carry the box outline when only an RLE mask is present
        poly = Polygon([(b.x, b.y), (b.x + b.w, b.y), (b.x + b.w, b.y + b.h), (b.x, b.y + b.h)])
    return FlakeRecord(
        chip_id=chip_id,
        material=det.category.material.value,
        thickness=det.category.thickness.value,
        score=det.score,
        centroid_um=centroid,
        bbox_um=bbox_um,
        mask_polygon_px=poly,
        source_tile_id=tile_id,
        tile_origin_um=tile_origin_um,
        um_per_px=um_per_px,
        created_at=0.0,  # deterministic catalogs across reruns
    )


def run_scan(
    source: SceneSource,
    plan: TilePlan,
    detector_endpoint: str,
    store: CatalogStore,
    policy: ScanPolicy = ScanPolicy(),
    controller: Optional[ScanController] = None,
    scan_id: Optional[str] = None,
    model: str = "replay",
) -> ScanReport:
    """Execute (or resume) a scan: move -> autofocus -> capture -> infer ->
    inverse transform -> dedupe -> catalog, tile by tile in snake order.

    The detector must pass a health check before the scan starts; per-tile
    failures retry then mark the tile failed without aborting the scan.
    Resuming an existing scan id skips tiles already recorded.
    """
    try:
        check_health(detector_endpoint)
    except Exception as e:
        raise ScanError(f"detector endpoint not healthy: {e}") from e

    controller = controller or ScanController(policy.confidence_threshold)
    scan_id = scan_id or f"scan-{uuid.uuid4().hex[:8]}"
    chip_id = source.scene.chip_id
    store.create_scan(
        scan_id,
        chip_id,
        {"tiles": len(plan), "fov_um": list(plan.fov_um), "overlap": plan.overlap},
        controller.threshold,
    )
    scan_row = store.get_scan(scan_id)
    start_tile = scan_row["next_tile"]
    store.update_scan(scan_id, status="running")

    stage = StageState(
        limits_um=source.scene.extent_um,
        fixed_latency_ms=policy.stage_fixed_ms,
        latency_ms_per_mm=policy.stage_ms_per_mm,
    )
    upp = source.optics.um_per_px
    lat = policy.latency

    sim_clock_ms = 0.0
    capture_done_ms = 0.0  # pipeline: capture chain completion
    record_done_ms = 0.0  # pipeline: infer/record chain completion
    stage_totals = {"move_focus": 0.0, "capture": 0.0, "infer": 0.0, "record": 0.0}
    completed = 0
    failed = 0
    threshold_changes: List[Tuple[int, float]] = []
    last_threshold = controller.threshold
    aborted = False

    for index in range(start_tile, len(plan)):
        # control commands apply between tiles
        while controller.state == "paused":
            store.update_scan(scan_id, status="paused")
            time.sleep(0.01)
        if controller.state == "aborted":
            aborted = True
            break
        if controller.threshold != last_threshold:
            last_threshold = controller.threshold
            threshold_changes.append((index, last_threshold))
        store.update_scan(scan_id, status="running")

        pos = plan.positions_um[index]
        tile_id = f"t{index:05d}"
        try:
            stage, move_ms = stage_move(stage, pos)
        except FlakescanError:
            failed += 1
            store.update_scan(scan_id, next_tile=index + 1)
            continue
        focus_ms = stage_autofocus(source.optics) + lat.autofocus_ms
        a_ms = move_ms + focus_ms + source.optics.capture_latency_ms + lat.capture_ms

        detections = None
        infer_ms = 0.0
        for attempt in range(policy.tile_retries + 1):
            try:
                image, _gt = source.capture(pos, policy.min_visible_area_px)
                req = InferRequest(chip_id=chip_id, tile_id=tile_id, image=image, model=model)
                resp, rtt_ms = client_infer(detector_endpoint, req)
                infer_ms = (
                    lat.infer_override_ms if lat.infer_override_ms is not None else resp.timing_ms
                )
                detections = resp.detections
                break
            except (TransportError, FlakescanError):
                continue
        if detections is None:
            failed += 1
            store.update_scan(scan_id, next_tile=index + 1)
            continue

        b_ms = lat.transfer_ms + infer_ms + lat.record_ms
        for det in detections:
            if det.score < last_threshold:
                continue
            rec = _detection_to_record(det, chip_id, tile_id, pos, upp)
            store.upsert_flake(rec, chip_extent_um=source.scene.extent_um)
            if policy.thumbnails:
                store.put_thumbnail(rec.flake_id, _crop_thumbnail(image, det.bbox))

        stage_totals["move_focus"] += move_ms + focus_ms
        stage_totals["capture"] += source.optics.capture_latency_ms + lat.capture_ms
        stage_totals["infer"] += lat.transfer_ms + infer_ms
        stage_totals["record"] += lat.record_ms
        if policy.pipeline:
            # two-stage pipeline: capture of tile k+1 overlaps inference of
            # tile k; persistence stays ordered by tile index
            capture_done_ms += a_ms
            record_done_ms = max(capture_done_ms, record_done_ms) + b_ms
            sim_clock_ms = record_done_ms
        else:
            sim_clock_ms += a_ms + b_ms
        if policy.real_sleep:
            time.sleep((a_ms + b_ms) / 1000.0)
        completed += 1
        store.update_scan(scan_id, next_tile=index + 1)

    # cross-tile dedupe over the whole chip once the scan has seen every
    # tile; aborted scans keep all sightings so a resumed run dedupes over
    # the complete set and converges on the uninterrupted result
    from .catalog import QueryFilters

    if not aborted:
        all_records = store.query_flakes(
            QueryFilters(chip_id=chip_id, limit=10**9, include_rejected=True)
        )
        kept = dedupe(all_records, policy.dedupe_iou)
        kept_ids = {r.flake_id for r in kept}
        for r in all_records:
            if r.flake_id not in kept_ids:
                with store._lock:
                    store._conn.execute("DELETE FROM flakes WHERE flake_id = ?", (r.flake_id,))
                    store._conn.commit()

    wall_s = sim_clock_ms / 1000.0
    fps = completed / wall_s if wall_s > 0 else 0.0
    report = ScanReport(
        scan_id=scan_id,
        chip_id=chip_id,
        tiles_total=len(plan),
        tiles_completed=completed + start_tile,
        tiles_failed=failed,
        flakes_cataloged=store.count_flakes(chip_id),
        wall_clock_s=wall_s,
        effective_fps=fps,
        stage_totals_ms=stage_totals,
        threshold_changes=threshold_changes,
    )
    store.update_scan(
        scan_id, status="failed" if aborted else "done", report=report.to_dict()
    )
    return report


def replay_fixture_from_scene(
    scene: ChipScene,
    plan: TilePlan,
    optics: OpticsConfig,
    min_visible_area_px: float = 16.0,
    score: float = 1.0,
) -> Dict[str, List[Detection]]:
    """Per-tile ground-truth detections for the replay backend: perfect
    detector standing in for the trained model."""
    fixture: Dict[str, List[Detection]] = {}
    for index, pos in enumerate(plan.positions_um):
        _, gt = render_tile(scene, pos, optics, min_visible_area_px=min_visible_area_px)
        dets = [
            Detection(ann.category, score, ann.bbox_px, mask_polygon=ann.polygon_px)
            for ann in gt
        ]
        if dets:
            fixture[f"t{index:05d}"] = dets
    return fixture


def _crop_thumbnail(image: np.ndarray, bbox: BBox, margin: int = 8) -> bytes:
    h, w = image.shape[:2]
    x0 = max(0, int(bbox.x) - margin)
    y0 = max(0, int(bbox.y) - margin)
    x1 = min(w, int(math.ceil(bbox.x + bbox.w)) + margin)
    y1 = min(h, int(math.ceil(bbox.y + bbox.h)) + margin)
    crop = image[y0:y1, x0:x1]
    ok, buf = cv2.imencode(".png", crop[:, :, ::-1])
    if not ok:
        raise ScanError("thumbnail encoding failed")
    return buf.tobytes()
