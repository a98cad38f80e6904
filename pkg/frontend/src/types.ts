/** Wire types mirroring the catalog HTTP API. */

export type Material = "graphene" | "hBN" | "MoS2" | "WTe2";
export type Thickness = "mono" | "few" | "thick";
export type ReviewStatus = "unreviewed" | "accepted" | "rejected" | "relabeled";
export type Verdict = "accepted" | "rejected" | "relabeled";

export interface ReviewState {
  status: ReviewStatus;
  note: string;
  corrected_thickness: Thickness | null;
}

export interface FlakeRecord {
  flake_id: string;
  chip_id: string;
  material: Material;
  /** effective thickness (corrected when relabeled) */
  thickness: Thickness;
  original_thickness: Thickness;
  score: number;
  centroid_um: [number, number];
  /** [x, y, w, h] in chip-global µm */
  bbox_um: [number, number, number, number];
  mask_polygon_px: [number, number][];
  source_tile_id: string;
  tile_origin_um: [number, number];
  um_per_px: number;
  created_at: number;
  review: ReviewState;
}

export interface FlakePage {
  flakes: FlakeRecord[];
  next: string | null;
}

export interface ReviewHistoryEntry {
  ts: number;
  status: Verdict;
  corrected_thickness: Thickness | null;
  note: string;
}

export interface FlakeDetail extends FlakeRecord {
  history: ReviewHistoryEntry[];
}

export type ScanStatus = "running" | "paused" | "done" | "failed";

export interface ScanRow {
  scan_id: string;
  chip_id: string;
  status: ScanStatus;
  threshold: number;
  next_tile: number;
  plan: { tiles: number; [k: string]: unknown };
  report: Record<string, unknown> | null;
}

export interface ControlAck {
  scan_id: string;
  state: string;
  threshold: number;
}

export interface GalleryFilters {
  chip?: string;
  material?: Material;
  thickness?: Thickness;
  min_score?: number;
  review_status?: ReviewStatus;
  include_rejected?: boolean;
}
