"""Persistent flake database and its HTTP API.

Storage is a single sqlite file in WAL mode (write-ahead durability) plus a
content-addressed thumbnail directory.  Record identity is a hash of
(chip, source tile, quantized geometry), which makes re-scans and resumed
scans idempotent.  The FastAPI app exposes query/review endpoints and
forwards scan-control commands to a scan controller when one is attached.
"""

from __future__ import annotations

import hashlib
import json
import sqlite3
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from fastapi import Request  # module scope so postponed annotations resolve

from .core import THICKNESSES, BBox, Category, FlakescanError, Polygon
from . import metrics as metrics_mod

REVIEW_STATUSES = ("unreviewed", "accepted", "rejected", "relabeled")


class CatalogError(FlakescanError):
    pass


class NotFoundError(CatalogError):
    pass


@dataclass(frozen=True)
class FlakeRecord:
    chip_id: str
    material: str
    thickness: str
    score: float
    centroid_um: Tuple[float, float]
    bbox_um: BBox
    mask_polygon_px: Polygon
    source_tile_id: str
    tile_origin_um: Tuple[float, float] = (0.0, 0.0)
    um_per_px: float = 1.0
    flake_id: Optional[str] = None  # derived when omitted
    created_at: Optional[float] = None
    review_status: str = "unreviewed"
    corrected_thickness: Optional[str] = None
    review_note: str = ""

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise CatalogError(f"score out of range: {self.score}")
        if self.flake_id is None:
            object.__setattr__(self, "flake_id", self.geometry_hash())

    def geometry_hash(self) -> str:
        b = self.bbox_um
        key = "|".join(
            [
                self.chip_id,
                self.source_tile_id,
                f"{b.x:.2f},{b.y:.2f},{b.w:.2f},{b.h:.2f}",
            ]
        )
        return hashlib.sha1(key.encode()).hexdigest()[:16]

    @property
    def effective_thickness(self) -> str:
        return self.corrected_thickness or self.thickness

    def to_dict(self) -> dict:
        return {
            "flake_id": self.flake_id,
            "chip_id": self.chip_id,
            "material": self.material,
            "thickness": self.effective_thickness,
            "original_thickness": self.thickness,
            "score": self.score,
            "centroid_um": list(self.centroid_um),
            "bbox_um": self.bbox_um.as_list(),
            "mask_polygon_px": [list(xy) for xy in self.mask_polygon_px.vertices],
            "source_tile_id": self.source_tile_id,
            "tile_origin_um": list(self.tile_origin_um),
            "um_per_px": self.um_per_px,
            "created_at": self.created_at,
            "review": {
                "status": self.review_status,
                "note": self.review_note,
                "corrected_thickness": self.corrected_thickness,
            },
        }


@dataclass
class QueryFilters:
    chip_id: Optional[str] = None
    material: Optional[str] = None
    thickness: Optional[str] = None
    min_score: Optional[float] = None
    region_um: Optional[Tuple[float, float, float, float]] = None  # x0, y0, x1, y1
    review_status: Optional[str] = None
    include_rejected: bool = False
    limit: int = 50
    after: Optional[str] = None  # keyset token, flake id of last row seen


_SCHEMA = """
CREATE TABLE IF NOT EXISTS flakes (
    flake_id TEXT PRIMARY KEY,
    chip_id TEXT NOT NULL,
    material TEXT NOT NULL,
    thickness TEXT NOT NULL,
    score REAL NOT NULL,
    cx REAL NOT NULL, cy REAL NOT NULL,
    bx REAL NOT NULL, by REAL NOT NULL, bw REAL NOT NULL, bh REAL NOT NULL,
    mask_json TEXT NOT NULL,
    tile_id TEXT NOT NULL,
    tile_ox REAL NOT NULL DEFAULT 0, tile_oy REAL NOT NULL DEFAULT 0,
    um_per_px REAL NOT NULL DEFAULT 1,
    created_at REAL NOT NULL,
    review_status TEXT NOT NULL DEFAULT 'unreviewed',
    corrected_thickness TEXT,
    review_note TEXT NOT NULL DEFAULT ''
);
CREATE TABLE IF NOT EXISTS review_history (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    flake_id TEXT NOT NULL,
    ts REAL NOT NULL,
    status TEXT NOT NULL,
    corrected_thickness TEXT,
    note TEXT NOT NULL DEFAULT ''
);
CREATE TABLE IF NOT EXISTS scans (
    scan_id TEXT PRIMARY KEY,
    chip_id TEXT NOT NULL,
    plan_json TEXT NOT NULL,
    status TEXT NOT NULL,
    threshold REAL NOT NULL,
    next_tile INTEGER NOT NULL DEFAULT 0,
    report_json TEXT
);
CREATE INDEX IF NOT EXISTS idx_flakes_order ON flakes (chip_id, cy, cx, flake_id);
"""


class CatalogStore:
    """Embedded store; many readers, writes serialized by a lock."""

    def __init__(self, path: str | Path):
        self.path = str(path)
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA synchronous=NORMAL")
        self._conn.executescript(_SCHEMA)
        self._conn.commit()
        thumb_dir = Path(self.path).with_suffix("") if self.path != ":memory:" else None
        self.thumb_dir = Path(str(thumb_dir) + ".thumbs") if thumb_dir else None
        if self.thumb_dir:
            self.thumb_dir.mkdir(parents=True, exist_ok=True)

    def close(self):
        self._conn.close()

    # --- flakes ---------------------------------------------------------------

    def upsert_flake(self, rec: FlakeRecord, chip_extent_um: Optional[Tuple[float, float]] = None) -> str:
        if chip_extent_um is not None:
            cx, cy = rec.centroid_um
            if not (0 <= cx <= chip_extent_um[0] and 0 <= cy <= chip_extent_um[1]):
                raise CatalogError(f"geometry outside chip extent: centroid {rec.centroid_um}")
        b = rec.bbox_um
        with self._lock:
            self._conn.execute(
                """INSERT INTO flakes
                   (flake_id, chip_id, material, thickness, score, cx, cy,
                    bx, by, bw, bh, mask_json, tile_id, tile_ox, tile_oy,
                    um_per_px, created_at)
                   VALUES (?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?)
                   ON CONFLICT(flake_id) DO UPDATE SET score = excluded.score""",
                (
                    rec.flake_id,
                    rec.chip_id,
                    rec.material,
                    rec.thickness,
                    rec.score,
                    rec.centroid_um[0],
                    rec.centroid_um[1],
                    b.x,
                    b.y,
                    b.w,
                    b.h,
                    json.dumps([list(xy) for xy in rec.mask_polygon_px.vertices]),
                    rec.source_tile_id,
                    rec.tile_origin_um[0],
                    rec.tile_origin_um[1],
                    rec.um_per_px,
                    rec.created_at if rec.created_at is not None else time.time(),
                ),
            )
            self._conn.commit()
        return rec.flake_id

    def _row_to_record(self, row) -> FlakeRecord:
        return FlakeRecord(
            chip_id=row[1],
            material=row[2],
            thickness=row[3],
            score=row[4],
            centroid_um=(row[5], row[6]),
            bbox_um=BBox(row[7], row[8], row[9], row[10]),
            mask_polygon_px=Polygon(json.loads(row[11])),
            source_tile_id=row[12],
            tile_origin_um=(row[13], row[14]),
            um_per_px=row[15],
            flake_id=row[0],
            created_at=row[16],
            review_status=row[17],
            corrected_thickness=row[18],
            review_note=row[19],
        )

    def get_flake(self, flake_id: str) -> FlakeRecord:
        cur = self._conn.execute("SELECT * FROM flakes WHERE flake_id = ?", (flake_id,))
        row = cur.fetchone()
        if row is None:
            raise NotFoundError(f"no flake {flake_id!r}")
        return self._row_to_record(row)

    def query_flakes(self, f: QueryFilters) -> List[FlakeRecord]:
        clauses = []
        args: list = []
        if f.chip_id:
            clauses.append("chip_id = ?")
            args.append(f.chip_id)
        if f.material:
            clauses.append("material = ?")
            args.append(f.material)
        if f.thickness:
            clauses.append("COALESCE(corrected_thickness, thickness) = ?")
            args.append(f.thickness)
        if f.min_score is not None:
            clauses.append("score >= ?")
            args.append(f.min_score)
        if f.region_um:
            x0, y0, x1, y1 = f.region_um
            clauses.append("cx >= ? AND cx <= ? AND cy >= ? AND cy <= ?")
            args.extend([x0, x1, y0, y1])
        if f.review_status:
            clauses.append("review_status = ?")
            args.append(f.review_status)
        elif not f.include_rejected:
            clauses.append("review_status != 'rejected'")
        if f.after:
            anchor = self.get_flake(f.after)
            clauses.append(
                "(chip_id, cy, cx, flake_id) > (?, ?, ?, ?)"
            )
            args.extend([anchor.chip_id, anchor.centroid_um[1], anchor.centroid_um[0], anchor.flake_id])
        where = ("WHERE " + " AND ".join(clauses)) if clauses else ""
        sql = f"SELECT * FROM flakes {where} ORDER BY chip_id, cy, cx, flake_id LIMIT ?"
        cur = self._conn.execute(sql, args + [f.limit])
        return [self._row_to_record(r) for r in cur.fetchall()]

    def count_flakes(self, chip_id: Optional[str] = None) -> int:
        if chip_id:
            cur = self._conn.execute("SELECT COUNT(*) FROM flakes WHERE chip_id = ?", (chip_id,))
        else:
            cur = self._conn.execute("SELECT COUNT(*) FROM flakes")
        return cur.fetchone()[0]

    # --- review ---------------------------------------------------------------

    def review_update(
        self,
        flake_id: str,
        verdict: str,
        corrected_thickness: Optional[str] = None,
        note: str = "",
    ) -> FlakeRecord:
        if verdict not in ("accepted", "rejected", "relabeled"):
            raise CatalogError(f"invalid verdict {verdict!r}")
        if verdict == "relabeled":
            if corrected_thickness not in THICKNESSES:
                raise CatalogError(
                    f"relabel needs a thickness from {THICKNESSES}, got {corrected_thickness!r}"
                )
        rec = self.get_flake(flake_id)  # raises NotFoundError
        with self._lock:
            self._conn.execute(
                """UPDATE flakes SET review_status = ?, corrected_thickness = ?,
                   review_note = ? WHERE flake_id = ?""",
                (
                    verdict,
                    corrected_thickness if verdict == "relabeled" else rec.corrected_thickness,
                    note,
                    flake_id,
                ),
            )
            self._conn.execute(
                "INSERT INTO review_history (flake_id, ts, status, corrected_thickness, note) VALUES (?,?,?,?,?)",
                (flake_id, time.time(), verdict, corrected_thickness, note),
            )
            self._conn.commit()
        return self.get_flake(flake_id)

    def review_history(self, flake_id: str) -> List[dict]:
        cur = self._conn.execute(
            "SELECT ts, status, corrected_thickness, note FROM review_history WHERE flake_id = ? ORDER BY seq",
            (flake_id,),
        )
        return [
            {"ts": r[0], "status": r[1], "corrected_thickness": r[2], "note": r[3]}
            for r in cur.fetchall()
        ]

    # --- thumbnails -----------------------------------------------------------

    def put_thumbnail(self, flake_id: str, png_bytes: bytes) -> None:
        if self.thumb_dir is None:
            return
        (self.thumb_dir / f"{flake_id}.png").write_bytes(png_bytes)

    def get_thumbnail(self, flake_id: str) -> Optional[bytes]:
        if self.thumb_dir is None:
            return None
        p = self.thumb_dir / f"{flake_id}.png"
        return p.read_bytes() if p.exists() else None

    # --- scans ----------------------------------------------------------------

    def create_scan(self, scan_id: str, chip_id: str, plan_summary: dict, threshold: float) -> None:
        with self._lock:
            self._conn.execute(
                """INSERT OR IGNORE INTO scans (scan_id, chip_id, plan_json, status, threshold, next_tile)
                   VALUES (?,?,?,?,?,0)""",
                (scan_id, chip_id, json.dumps(plan_summary), "running", threshold),
            )
            self._conn.commit()

    def update_scan(
        self,
        scan_id: str,
        status: Optional[str] = None,
        next_tile: Optional[int] = None,
        threshold: Optional[float] = None,
        report: Optional[dict] = None,
    ) -> None:
        sets, args = [], []
        if status is not None:
            sets.append("status = ?")
            args.append(status)
        if next_tile is not None:
            sets.append("next_tile = ?")
            args.append(next_tile)
        if threshold is not None:
            sets.append("threshold = ?")
            args.append(threshold)
        if report is not None:
            sets.append("report_json = ?")
            args.append(json.dumps(report))
        if not sets:
            return
        with self._lock:
            self._conn.execute(
                f"UPDATE scans SET {', '.join(sets)} WHERE scan_id = ?", args + [scan_id]
            )
            self._conn.commit()

    def get_scan(self, scan_id: str) -> dict:
        cur = self._conn.execute("SELECT * FROM scans WHERE scan_id = ?", (scan_id,))
        row = cur.fetchone()
        if row is None:
            raise NotFoundError(f"no scan {scan_id!r}")
        return {
            "scan_id": row[0],
            "chip_id": row[1],
            "plan": json.loads(row[2]),
            "status": row[3],
            "threshold": row[4],
            "next_tile": row[5],
            "report": json.loads(row[6]) if row[6] else None,
        }

    def list_scans(self) -> List[dict]:
        cur = self._conn.execute("SELECT scan_id FROM scans ORDER BY scan_id")
        return [self.get_scan(r[0]) for r in cur.fetchall()]


# --- export and reports -------------------------------------------------------

def export_coco(store: CatalogStore, chip_id: str, filters: Optional[QueryFilters] = None) -> bytes:
    """COCO export of a chip's cataloged flakes, one synthetic image per
    source tile."""
    from .dataset import AnnotationRecord, DatasetIndex, ImageEntry, serialize_coco

    f = filters or QueryFilters(limit=10**9)
    f.chip_id = chip_id
    f.limit = 10**9
    records = store.query_flakes(f)
    tiles = sorted({r.source_tile_id for r in records})
    tile_ids = {t: i + 1 for i, t in enumerate(tiles)}
    images = tuple(
        ImageEntry(id=tile_ids[t], file_name=f"{chip_id}/{t}.png", width=1024, height=1024)
        for t in tiles
    )
    anns = []
    for i, r in enumerate(records):
        poly = r.mask_polygon_px
        bb = poly.bbox()
        anns.append(
            AnnotationRecord(
                id=i + 1,
                image_id=tile_ids[r.source_tile_id],
                category=Category.from_name(f"{r.material}_{r.effective_thickness}"),
                polygon=poly,
                bbox=bb,
                area=bb.area,
            )
        )
    return serialize_coco(DatasetIndex(images, tuple(anns)))


def report_metrics(
    store: CatalogStore,
    chip_id: str,
    gt_by_tile: Dict[str, List[Tuple[str, BBox]]],
    iou_threshold: float = 0.5,
) -> dict:
    """Per-image confusion + precision/recall over a scan's tiles.

    ``gt_by_tile`` maps tile id -> [(material, bbox in µm)]; every tile in
    the mapping is evaluated, including empty ones.
    """
    from .core import Detection as Det

    f = QueryFilters(chip_id=chip_id, limit=10**9, include_rejected=True)
    records = store.query_flakes(f)
    by_tile: Dict[str, list] = {}
    for r in records:
        det = Det(
            category=Category.from_name(f"{r.material}_{r.effective_thickness}"),
            score=r.score,
            bbox=r.bbox_um,
            mask_polygon=r.mask_polygon_px,
        )
        by_tile.setdefault(r.source_tile_id, []).append(det)
    images = [
        (gt_by_tile.get(tile, []), by_tile.get(tile, []))
        for tile in sorted(set(gt_by_tile) | set(by_tile))
    ]
    counts = metrics_mod.per_image_confusion(images, iou_threshold)
    pr = metrics_mod.precision_recall(counts)
    return {
        "chip_id": chip_id,
        "tp": counts.tp,
        "fp": counts.fp,
        "fn": counts.fn,
        "tn": counts.tn,
        "precision": pr.precision,
        "recall": pr.recall,
    }


# --- HTTP API -----------------------------------------------------------------

def make_app(store: CatalogStore, scan_controller=None, static_dir: Optional[str] = None):
    """FastAPI app over a store; scan control is forwarded to the attached
    controller (anything with pause/resume/abort/set_threshold)."""
    from fastapi import FastAPI, HTTPException, Query, Response
    from fastapi.responses import JSONResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="flakescan catalog")

    @app.get("/api/flakes")
    def list_flakes(
        chip: Optional[str] = None,
        material: Optional[str] = None,
        thickness: Optional[str] = None,
        min_score: Optional[float] = None,
        review_status: Optional[str] = None,
        include_rejected: bool = False,
        limit: int = Query(50, ge=1, le=1000),
        after: Optional[str] = None,
    ):
        f = QueryFilters(
            chip_id=chip,
            material=material,
            thickness=thickness,
            min_score=min_score,
            review_status=review_status,
            include_rejected=include_rejected,
            limit=limit,
            after=after,
        )
        try:
            records = store.query_flakes(f)
        except NotFoundError as e:
            raise HTTPException(400, str(e))
        next_token = records[-1].flake_id if len(records) == limit else None
        return {"flakes": [r.to_dict() for r in records], "next": next_token}

    @app.get("/api/flakes/{flake_id}")
    def get_flake(flake_id: str):
        try:
            rec = store.get_flake(flake_id)
        except NotFoundError as e:
            raise HTTPException(404, str(e))
        d = rec.to_dict()
        d["history"] = store.review_history(flake_id)
        return d

    @app.post("/api/flakes/{flake_id}/review")
    async def review(flake_id: str, request: Request):
        body = await request.json()
        try:
            rec = store.review_update(
                flake_id,
                body.get("verdict", ""),
                body.get("corrected_thickness"),
                body.get("note", ""),
            )
        except NotFoundError as e:
            raise HTTPException(404, str(e))
        except CatalogError as e:
            raise HTTPException(400, str(e))
        return rec.to_dict()

    @app.get("/api/flakes/{flake_id}/thumbnail")
    def thumbnail(flake_id: str):
        data = store.get_thumbnail(flake_id)
        if data is None:
            raise HTTPException(404, "no thumbnail")
        return Response(content=data, media_type="image/png")

    @app.get("/api/scans")
    def scans():
        return {"scans": store.list_scans()}

    @app.get("/api/scans/{scan_id}")
    def get_scan(scan_id: str):
        try:
            return store.get_scan(scan_id)
        except NotFoundError as e:
            raise HTTPException(404, str(e))

    def _control(scan_id: str, action: str, value=None):
        if scan_controller is None:
            raise HTTPException(409, "no scan controller attached")
        try:
            store.get_scan(scan_id)
        except NotFoundError as e:
            raise HTTPException(404, str(e))
        if action == "pause":
            scan_controller.pause()
        elif action == "resume":
            scan_controller.resume()
        elif action == "abort":
            scan_controller.abort()
        elif action == "threshold":
            scan_controller.set_threshold(value)
        return {"scan_id": scan_id, "state": scan_controller.state, "threshold": scan_controller.threshold}

    @app.post("/api/scans/{scan_id}/pause")
    def pause(scan_id: str):
        return _control(scan_id, "pause")

    @app.post("/api/scans/{scan_id}/resume")
    def resume(scan_id: str):
        return _control(scan_id, "resume")

    @app.post("/api/scans/{scan_id}/abort")
    def abort(scan_id: str):
        return _control(scan_id, "abort")

    @app.patch("/api/scans/{scan_id}/threshold")
    async def threshold(scan_id: str, request: Request):
        body = await request.json()
        value = body.get("threshold")
        if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
            raise HTTPException(400, "threshold must be a number in [0, 1]")
        return _control(scan_id, "threshold", float(value))

    @app.get("/api/reports/{chip_id}")
    def report(chip_id: str):
        f = QueryFilters(chip_id=chip_id, limit=10**9)
        records = store.query_flakes(f)
        by_material: Dict[str, int] = {}
        for r in records:
            by_material[r.material] = by_material.get(r.material, 0) + 1
        return {"chip_id": chip_id, "total": len(records), "by_material": by_material}

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
