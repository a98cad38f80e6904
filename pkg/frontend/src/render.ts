/** Pure HTML renderers: state in, markup out.  Keeping these free of DOM
 * access lets the logic run (and be tested) without a browser; main.ts does
 * the wiring.
 */

import type { GalleryState } from "./gallery.js";
import type { ScanView } from "./scan.js";
import type { FlakeRecord } from "./types.js";

function esc(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** SVG mask overlay for a thumbnail: polygon + dashed bbox in tile px,
 * shifted into the thumbnail's crop frame. */
export function overlaySvg(
  record: FlakeRecord,
  cropOrigin: [number, number],
  size: [number, number],
): string {
  const [ox, oy] = cropOrigin;
  const [w, h] = size;
  const points = record.mask_polygon_px
    .map(([x, y]) => `${(x - ox).toFixed(1)},${(y - oy).toFixed(1)}`)
    .join(" ");
  const [bx, by, bw, bh] = record.bbox_um;
  const px = 1 / record.um_per_px;
  const rx = (bx - record.tile_origin_um[0]) * px - ox;
  const ry = (by - record.tile_origin_um[1]) * px - oy;
  return (
    `<svg class="overlay" viewBox="0 0 ${w} ${h}">` +
    `<polygon points="${points}" />` +
    `<rect x="${rx.toFixed(1)}" y="${ry.toFixed(1)}" ` +
    `width="${(bw * px).toFixed(1)}" height="${(bh * px).toFixed(1)}" ` +
    `stroke-dasharray="4 2" fill="none" />` +
    `</svg>`
  );
}

export function flakeCard(record: FlakeRecord, thumbnailUrl: string): string {
  const review = record.review.status;
  return (
    `<article class="card" data-flake-id="${esc(record.flake_id)}">` +
    `<img src="${esc(thumbnailUrl)}" alt="flake ${esc(record.flake_id)}">` +
    `<header>${esc(record.material)} / ${esc(record.thickness)}</header>` +
    `<p>score ${record.score.toFixed(3)} · tile ${esc(record.source_tile_id)}</p>` +
    `<p class="review review-${esc(review)}">${esc(review)}</p>` +
    `</article>`
  );
}

export function galleryView(state: GalleryState, thumbnailUrl: (id: string) => string): string {
  if (state.status === "error") {
    return (
      `<div class="degraded" role="alert">` +
      `<p>catalog unreachable: ${esc(state.error ?? "unknown error")}</p>` +
      `<button data-action="retry">retry</button>` +
      `</div>`
    );
  }
  if (state.status === "loading") {
    return `<p class="loading">loading…</p>`;
  }
  if (state.records.length === 0) {
    return `<p class="empty">no flakes match the current filters</p>`;
  }
  const cards = state.records.map((r) => flakeCard(r, thumbnailUrl(r.flake_id))).join("");
  const pager =
    `<nav class="pager">` +
    `<button data-action="prev" ${state.pageIndex === 0 ? "disabled" : ""}>prev</button>` +
    `<span>page ${state.pageIndex + 1}</span>` +
    `<button data-action="next" ${state.hasNext ? "" : "disabled"}>next</button>` +
    `</nav>`;
  return `<div class="gallery">${cards}</div>${pager}`;
}

export function scanView(view: ScanView): string {
  if (!view.scan) {
    return view.error
      ? `<div class="degraded" role="alert">scan status unavailable: ${esc(view.error)}</div>`
      : `<p class="loading">loading…</p>`;
  }
  const s = view.scan;
  const disabled = view.finished ? "disabled" : "";
  const pct = s.plan.tiles > 0 ? ((100 * s.next_tile) / s.plan.tiles).toFixed(1) : "0.0";
  return (
    `<section class="scan" data-scan-id="${esc(s.scan_id)}">` +
    `<header>scan ${esc(s.scan_id)} on ${esc(s.chip_id)} — ${esc(s.status)}</header>` +
    `<p>tiles ${s.next_tile}/${s.plan.tiles} (${pct}%)</p>` +
    `<label>threshold <input type="range" min="0" max="1" step="0.05" ` +
    `value="${s.threshold}" data-action="threshold" ${disabled}></label>` +
    `<button data-action="pause" ${disabled}>pause</button>` +
    `<button data-action="resume" ${disabled}>resume</button>` +
    `<button data-action="abort" ${disabled}>abort</button>` +
    (view.finished ? `<p class="notice">scan ${esc(s.status)}; controls disabled</p>` : "") +
    `</section>`
  );
}
