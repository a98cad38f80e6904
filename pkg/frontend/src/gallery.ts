/** Gallery state: filterable, keyset-paginated browsing of the catalog.
 *
 * The store keeps no truth of its own — every page is refetched from the
 * API, and the filter state round-trips through the URL query string so
 * views are deep-linkable.
 */

import type { CatalogApi } from "./api.js";
import type { FlakeRecord, GalleryFilters, Material, ReviewStatus, Thickness } from "./types.js";

export const PAGE_SIZE = 20;

export type GalleryStatus = "idle" | "loading" | "ready" | "error";

export interface GalleryState {
  filters: GalleryFilters;
  pageIndex: number;
  records: FlakeRecord[];
  status: GalleryStatus;
  error: string | null;
  hasNext: boolean;
}

/** Serialize filter state for the address bar. */
export function filtersToQuery(filters: GalleryFilters): string {
  const q = new URLSearchParams();
  if (filters.chip) q.set("chip", filters.chip);
  if (filters.material) q.set("material", filters.material);
  if (filters.thickness) q.set("thickness", filters.thickness);
  if (filters.min_score !== undefined) q.set("min_score", String(filters.min_score));
  if (filters.review_status) q.set("review_status", filters.review_status);
  if (filters.include_rejected) q.set("include_rejected", "1");
  return q.toString();
}

export function filtersFromQuery(query: string): GalleryFilters {
  const q = new URLSearchParams(query);
  const filters: GalleryFilters = {};
  const chip = q.get("chip");
  if (chip) filters.chip = chip;
  const material = q.get("material");
  if (material) filters.material = material as Material;
  const thickness = q.get("thickness");
  if (thickness) filters.thickness = thickness as Thickness;
  const minScore = q.get("min_score");
  if (minScore !== null) filters.min_score = Number(minScore);
  const review = q.get("review_status");
  if (review) filters.review_status = review as ReviewStatus;
  if (q.get("include_rejected") === "1") filters.include_rejected = true;
  return filters;
}

export class GalleryStore {
  private filters: GalleryFilters = {};
  /** page-start cursors; pageTokens[i] is the `after` token for page i */
  private pageTokens: (string | null)[] = [null];
  private pageIndex = 0;
  private records: FlakeRecord[] = [];
  private status: GalleryStatus = "idle";
  private error: string | null = null;
  private hasNext = false;
  private listeners: ((s: GalleryState) => void)[] = [];

  constructor(private readonly api: CatalogApi) {}

  subscribe(fn: (s: GalleryState) => void): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((f) => f !== fn);
    };
  }

  get state(): GalleryState {
    return {
      filters: { ...this.filters },
      pageIndex: this.pageIndex,
      records: [...this.records],
      status: this.status,
      error: this.error,
      hasNext: this.hasNext,
    };
  }

  private emit(): void {
    const snapshot = this.state;
    for (const fn of this.listeners) fn(snapshot);
  }

  async setFilters(filters: GalleryFilters): Promise<void> {
    this.filters = { ...filters };
    this.pageTokens = [null];
    this.pageIndex = 0;
    await this.loadCurrentPage();
  }

  async refresh(): Promise<void> {
    await this.loadCurrentPage();
  }

  async nextPage(): Promise<boolean> {
    if (!this.hasNext) return false;
    this.pageIndex += 1;
    await this.loadCurrentPage();
    return true;
  }

  async prevPage(): Promise<boolean> {
    if (this.pageIndex === 0) return false;
    this.pageIndex -= 1;
    await this.loadCurrentPage();
    return true;
  }

  private async loadCurrentPage(): Promise<void> {
    this.status = "loading";
    this.emit();
    try {
      const after = this.pageTokens[this.pageIndex];
      const page = await this.api.listFlakes(this.filters, PAGE_SIZE, after);
      this.records = page.flakes;
      this.hasNext = page.next !== null;
      this.pageTokens[this.pageIndex + 1] = page.next;
      this.status = "ready";
      this.error = null;
    } catch (err) {
      // degraded state stays visible; the previous records are dropped so a
      // stale gallery is never mistaken for live data
      this.records = [];
      this.hasNext = false;
      this.status = "error";
      this.error = err instanceof Error ? err.message : String(err);
    }
    this.emit();
  }
}
