/** Scan monitor: 1 s polling of scan status plus pause/resume/abort and a
 * live confidence-threshold control.  Counters come straight from the API
 * on every poll; nothing is accumulated client-side.
 */

import type { CatalogApi } from "./api.js";
import type { ScanRow } from "./types.js";

export const POLL_INTERVAL_MS = 1000;

export type TileState = "done" | "pending";

export interface ScanView {
  scan: ScanRow | null;
  error: string | null;
  /** true once the scan reached done/failed; controls should disable */
  finished: boolean;
}

export function tileStates(scan: ScanRow): TileState[] {
  const total = scan.plan.tiles;
  const states: TileState[] = [];
  for (let i = 0; i < total; i++) {
    states.push(i < scan.next_tile ? "done" : "pending");
  }
  return states;
}

export class ScanMonitor {
  private view: ScanView = { scan: null, error: null, finished: false };
  private timer: ReturnType<typeof setInterval> | null = null;
  private listeners: ((v: ScanView) => void)[] = [];

  constructor(
    private readonly api: CatalogApi,
    private readonly scanId: string,
  ) {}

  subscribe(fn: (v: ScanView) => void): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((f) => f !== fn);
    };
  }

  get current(): ScanView {
    return { ...this.view };
  }

  private emit(): void {
    const snapshot = this.current;
    for (const fn of this.listeners) fn(snapshot);
  }

  async poll(): Promise<ScanView> {
    try {
      const scan = await this.api.getScan(this.scanId);
      this.view = {
        scan,
        error: null,
        finished: scan.status === "done" || scan.status === "failed",
      };
    } catch (err) {
      this.view = {
        ...this.view,
        error: err instanceof Error ? err.message : String(err),
      };
    }
    this.emit();
    return this.current;
  }

  start(): void {
    if (this.timer !== null) return;
    void this.poll();
    this.timer = setInterval(() => void this.poll(), POLL_INTERVAL_MS);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  private guardFinished(): string | null {
    return this.view.finished ? `scan is ${this.view.scan?.status}; controls disabled` : null;
  }

  async pause(): Promise<string | null> {
    const blocked = this.guardFinished();
    if (blocked) return blocked;
    await this.api.pause(this.scanId);
    await this.poll();
    return null;
  }

  async resume(): Promise<string | null> {
    const blocked = this.guardFinished();
    if (blocked) return blocked;
    await this.api.resume(this.scanId);
    await this.poll();
    return null;
  }

  async abort(): Promise<string | null> {
    const blocked = this.guardFinished();
    if (blocked) return blocked;
    await this.api.abort(this.scanId);
    await this.poll();
    return null;
  }

  async setThreshold(value: number): Promise<string | null> {
    const blocked = this.guardFinished();
    if (blocked) return blocked;
    await this.api.setThreshold(this.scanId, value);
    await this.poll();
    return null;
  }
}
