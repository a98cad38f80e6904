/** Review queue: unreviewed flakes sorted by descending score, with
 * keyboard-speed verdicts.  Updates are optimistic and rolled back if the
 * API rejects them, so the queue never lies about persisted state.
 */

import type { CatalogApi } from "./api.js";
import type { FlakeRecord, Thickness, Verdict } from "./types.js";

export interface ReviewOutcome {
  ok: boolean;
  /** set when the API rejected the verdict and the item was restored */
  error?: string;
}

export class ReviewQueue {
  private items: FlakeRecord[] = [];
  private listeners: (() => void)[] = [];

  constructor(
    private readonly api: CatalogApi,
    private readonly chip?: string,
  ) {}

  subscribe(fn: () => void): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((f) => f !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  get queue(): FlakeRecord[] {
    return [...this.items];
  }

  get current(): FlakeRecord | null {
    return this.items[0] ?? null;
  }

  /** Pull every unreviewed flake, highest score first. */
  async load(): Promise<void> {
    const collected: FlakeRecord[] = [];
    let after: string | null = null;
    for (;;) {
      const page = await this.api.listFlakes(
        { chip: this.chip, review_status: "unreviewed" },
        100,
        after,
      );
      collected.push(...page.flakes);
      if (!page.next) break;
      after = page.next;
    }
    collected.sort((a, b) => b.score - a.score || a.flake_id.localeCompare(b.flake_id));
    this.items = collected;
    this.emit();
  }

  async submit(
    verdict: Verdict,
    correctedThickness?: Thickness,
    note = "",
  ): Promise<ReviewOutcome> {
    const item = this.items[0];
    if (!item) return { ok: false, error: "queue is empty" };
    // optimistic: advance immediately, restore on failure
    this.items = this.items.slice(1);
    this.emit();
    try {
      await this.api.review(item.flake_id, verdict, correctedThickness, note);
      return { ok: true };
    } catch (err) {
      this.items = [item, ...this.items];
      this.emit();
      return { ok: false, error: err instanceof Error ? err.message : String(err) };
    }
  }

  accept(): Promise<ReviewOutcome> {
    return this.submit("accepted");
  }

  reject(note = ""): Promise<ReviewOutcome> {
    return this.submit("rejected", undefined, note);
  }

  relabel(thickness: Thickness, note = ""): Promise<ReviewOutcome> {
    return this.submit("relabeled", thickness, note);
  }
}

/** Map a key press to a queue action; returns false for unbound keys. */
export async function handleReviewKey(
  queue: ReviewQueue,
  key: string,
): Promise<ReviewOutcome | false> {
  switch (key) {
    case "a":
      return queue.accept();
    case "x":
      return queue.reject();
    case "1":
      return queue.relabel("mono");
    case "2":
      return queue.relabel("few");
    case "3":
      return queue.relabel("thick");
    default:
      return false;
  }
}
