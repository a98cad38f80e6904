/** Browser bootstrap: wires the stores to the DOM.  The catalog service
 * serves this bundle statically, so the API lives at the same origin.
 */

import { CatalogApi } from "./api.js";
import { GalleryStore, filtersFromQuery, filtersToQuery } from "./gallery.js";
import { ReviewQueue, handleReviewKey } from "./review.js";
import { ScanMonitor } from "./scan.js";
import { galleryView, scanView } from "./render.js";
import type { GalleryFilters, Material, ReviewStatus, Thickness } from "./types.js";

const api = new CatalogApi("");
const gallery = new GalleryStore(api);
const queue = new ReviewQueue(api);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function readFilterForm(): GalleryFilters {
  const filters: GalleryFilters = {};
  const material = el<HTMLSelectElement>("filter-material").value;
  if (material) filters.material = material as Material;
  const thickness = el<HTMLSelectElement>("filter-thickness").value;
  if (thickness) filters.thickness = thickness as Thickness;
  const minScore = el<HTMLInputElement>("filter-score").value;
  if (minScore) filters.min_score = Number(minScore);
  const review = el<HTMLSelectElement>("filter-review").value;
  if (review) filters.review_status = review as ReviewStatus;
  return filters;
}

function syncUrl(filters: GalleryFilters): void {
  const query = filtersToQuery(filters);
  history.replaceState(null, "", query ? `?${query}` : location.pathname);
}

async function bootGallery(): Promise<void> {
  const container = el<HTMLDivElement>("gallery-root");
  gallery.subscribe((state) => {
    container.innerHTML = galleryView(state, (id) => api.thumbnailUrl(id));
  });
  container.addEventListener("click", (ev) => {
    const action = (ev.target as HTMLElement).dataset?.action;
    if (action === "next") void gallery.nextPage();
    if (action === "prev") void gallery.prevPage();
    if (action === "retry") void gallery.refresh();
  });
  el<HTMLFormElement>("filter-form").addEventListener("change", () => {
    const filters = readFilterForm();
    syncUrl(filters);
    void gallery.setFilters(filters);
  });
  await gallery.setFilters(filtersFromQuery(location.search));
}

async function bootReview(): Promise<void> {
  const status = el<HTMLParagraphElement>("review-status");
  queue.subscribe(() => {
    const item = queue.current;
    status.textContent = item
      ? `${queue.queue.length} queued — next: ${item.material}/${item.thickness} ` +
        `score ${item.score.toFixed(3)} (a=accept x=reject 1/2/3=relabel)`
      : "review queue empty";
  });
  document.addEventListener("keydown", (ev) => {
    void handleReviewKey(queue, ev.key).then((outcome) => {
      if (outcome && !outcome.ok && outcome.error) {
        status.textContent = `review failed: ${outcome.error} (item restored)`;
      }
      if (outcome && outcome.ok) void gallery.refresh();
    });
  });
  await queue.load();
}

async function bootScan(): Promise<void> {
  const container = el<HTMLDivElement>("scan-root");
  const { scans } = await api.listScans();
  if (scans.length === 0) {
    container.innerHTML = `<p class="empty">no scans recorded</p>`;
    return;
  }
  const monitor = new ScanMonitor(api, scans[scans.length - 1]);
  monitor.subscribe((view) => {
    container.innerHTML = scanView(view);
  });
  container.addEventListener("click", (ev) => {
    const action = (ev.target as HTMLElement).dataset?.action;
    if (action === "pause") void monitor.pause();
    if (action === "resume") void monitor.resume();
    if (action === "abort") void monitor.abort();
  });
  container.addEventListener("change", (ev) => {
    const target = ev.target as HTMLInputElement;
    if (target.dataset?.action === "threshold") {
      void monitor.setThreshold(Number(target.value));
    }
  });
  monitor.start();
}

void bootGallery().then(bootReview).then(bootScan);
