import { beforeEach, describe, expect, it } from "vitest";

import { CatalogApi } from "../src/api.js";
import { GalleryStore, PAGE_SIZE, filtersFromQuery, filtersToQuery } from "../src/gallery.js";
import type { GalleryFilters, Material, Thickness } from "../src/types.js";
import { MockCatalogServer } from "./mockServer.js";

const MATERIALS: Material[] = ["graphene", "hBN", "MoS2", "WTe2"];
const THICKNESSES: Thickness[] = ["mono", "few", "thick"];

function seededServer(n = 45): MockCatalogServer {
  const server = new MockCatalogServer();
  for (let i = 0; i < n; i++) {
    server.addFlake({
      flake_id: `f${String(i).padStart(3, "0")}`,
      chip_id: i % 3 === 0 ? "chipB" : "chipA",
      material: MATERIALS[i % MATERIALS.length],
      thickness: THICKNESSES[i % THICKNESSES.length],
      score: Math.round(((i * 37) % 100)) / 100,
      centroid_um: [(i * 53) % 500, (i * 29) % 500],
    });
  }
  return server;
}

describe("gallery browsing", () => {
  let server: MockCatalogServer;
  let store: GalleryStore;

  beforeEach(() => {
    server = seededServer();
    store = new GalleryStore(new CatalogApi("http://mock", server.fetch));
  });

  function oracleIds(filters: GalleryFilters): string[] {
    const q = new URLSearchParams();
    if (filters.chip) q.set("chip", filters.chip);
    if (filters.material) q.set("material", filters.material);
    if (filters.thickness) q.set("thickness", filters.thickness);
    if (filters.min_score !== undefined) q.set("min_score", String(filters.min_score));
    if (filters.review_status) q.set("review_status", filters.review_status);
    if (filters.include_rejected) q.set("include_rejected", "true");
    q.set("limit", "1000");
    return server.queryOracle(q).map((f) => f.flake_id);
  }

  it("matches the API-side oracle for every filter combination", async () => {
    const cases: GalleryFilters[] = [
      {},
      { material: "graphene" },
      { thickness: "mono" },
      { material: "WTe2", thickness: "few" },
      { min_score: 0.5 },
      { chip: "chipB" },
      { chip: "chipA", material: "hBN", min_score: 0.2 },
    ];
    for (const filters of cases) {
      await store.setFilters(filters);
      const collected: string[] = [];
      collected.push(...store.state.records.map((r) => r.flake_id));
      while (store.state.hasNext) {
        await store.nextPage();
        collected.push(...store.state.records.map((r) => r.flake_id));
      }
      expect(collected).toEqual(oracleIds(filters));
    }
  });

  it("pages 45 records as 20/20/5", async () => {
    await store.setFilters({});
    expect(store.state.records).toHaveLength(PAGE_SIZE);
    expect(store.state.hasNext).toBe(true);
    await store.nextPage();
    expect(store.state.records).toHaveLength(PAGE_SIZE);
    await store.nextPage();
    expect(store.state.records).toHaveLength(5);
    expect(store.state.hasNext).toBe(false);
    // and back up without losing position
    await store.prevPage();
    expect(store.state.pageIndex).toBe(1);
    expect(store.state.records).toHaveLength(PAGE_SIZE);
  });

  it("shows an explicit empty state for an empty catalog", async () => {
    const empty = new GalleryStore(new CatalogApi("http://mock", new MockCatalogServer().fetch));
    await empty.setFilters({});
    expect(empty.state.status).toBe("ready");
    expect(empty.state.records).toEqual([]);
  });

  it("degrades visibly when the API is down, then recovers on retry", async () => {
    server.offline = true;
    await store.setFilters({});
    expect(store.state.status).toBe("error");
    expect(store.state.error).toBeTruthy();
    expect(store.state.records).toEqual([]);
    server.offline = false;
    await store.refresh();
    expect(store.state.status).toBe("ready");
    expect(store.state.records.length).toBeGreaterThan(0);
  });

  it("hides rejected records unless asked for", async () => {
    const q = new URLSearchParams([["limit", "1000"]]);
    const victim = server.queryOracle(q)[0].flake_id;
    const api = new CatalogApi("http://mock", server.fetch);
    await api.review(victim, "rejected");
    await store.setFilters({});
    const ids: string[] = [...store.state.records.map((r) => r.flake_id)];
    while (store.state.hasNext) {
      await store.nextPage();
      ids.push(...store.state.records.map((r) => r.flake_id));
    }
    expect(ids).not.toContain(victim);
    await store.setFilters({ include_rejected: true } as GalleryFilters);
    const all: string[] = [...store.state.records.map((r) => r.flake_id)];
    while (store.state.hasNext) {
      await store.nextPage();
      all.push(...store.state.records.map((r) => r.flake_id));
    }
    expect(all).toContain(victim);
  });
});

describe("deep-linkable filter state", () => {
  it("round-trips through the query string", () => {
    const filters: GalleryFilters = {
      chip: "chipA",
      material: "MoS2",
      thickness: "thick",
      min_score: 0.25,
      review_status: "unreviewed",
      include_rejected: true,
    };
    expect(filtersFromQuery(filtersToQuery(filters))).toEqual(filters);
  });

  it("omits unset fields", () => {
    expect(filtersToQuery({})).toBe("");
    expect(filtersFromQuery("")).toEqual({});
  });
});
