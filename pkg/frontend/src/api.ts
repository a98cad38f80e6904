/** Thin typed client over the catalog HTTP API.
 *
 * Every displayed fact in the UI comes back through this module; the fetch
 * implementation is injectable so tests can run against a mock backend.
 */

import type {
  ControlAck,
  FlakeDetail,
  FlakePage,
  GalleryFilters,
  ScanRow,
  Thickness,
  Verdict,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function parse<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      /* non-JSON error body; keep the status text */
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class CatalogApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private get(path: string): Promise<Response> {
    return this.fetchFn(this.baseUrl + path);
  }

  private send(path: string, method: string, body?: unknown): Promise<Response> {
    return this.fetchFn(this.baseUrl + path, {
      method,
      headers: { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
  }

  listFlakes(
    filters: GalleryFilters,
    limit: number,
    after?: string | null,
  ): Promise<FlakePage> {
    const q = new URLSearchParams();
    if (filters.chip) q.set("chip", filters.chip);
    if (filters.material) q.set("material", filters.material);
    if (filters.thickness) q.set("thickness", filters.thickness);
    if (filters.min_score !== undefined) q.set("min_score", String(filters.min_score));
    if (filters.review_status) q.set("review_status", filters.review_status);
    if (filters.include_rejected) q.set("include_rejected", "true");
    q.set("limit", String(limit));
    if (after) q.set("after", after);
    return this.get(`/api/flakes?${q.toString()}`).then((r) => parse<FlakePage>(r));
  }

  getFlake(flakeId: string): Promise<FlakeDetail> {
    return this.get(`/api/flakes/${flakeId}`).then((r) => parse<FlakeDetail>(r));
  }

  review(
    flakeId: string,
    verdict: Verdict,
    correctedThickness?: Thickness,
    note = "",
  ): Promise<FlakeDetail> {
    return this.send(`/api/flakes/${flakeId}/review`, "POST", {
      verdict,
      corrected_thickness: correctedThickness ?? null,
      note,
    }).then((r) => parse<FlakeDetail>(r));
  }

  thumbnailUrl(flakeId: string): string {
    return `${this.baseUrl}/api/flakes/${flakeId}/thumbnail`;
  }

  listScans(): Promise<{ scans: string[] }> {
    return this.get("/api/scans").then((r) => parse<{ scans: string[] }>(r));
  }

  getScan(scanId: string): Promise<ScanRow> {
    return this.get(`/api/scans/${scanId}`).then((r) => parse<ScanRow>(r));
  }

  pause(scanId: string): Promise<ControlAck> {
    return this.send(`/api/scans/${scanId}/pause`, "POST").then((r) => parse<ControlAck>(r));
  }

  resume(scanId: string): Promise<ControlAck> {
    return this.send(`/api/scans/${scanId}/resume`, "POST").then((r) => parse<ControlAck>(r));
  }

  abort(scanId: string): Promise<ControlAck> {
    return this.send(`/api/scans/${scanId}/abort`, "POST").then((r) => parse<ControlAck>(r));
  }

  setThreshold(scanId: string, threshold: number): Promise<ControlAck> {
    return this.send(`/api/scans/${scanId}/threshold`, "PATCH", { threshold }).then((r) =>
      parse<ControlAck>(r),
    );
  }
}
