"""End-to-end automated flake search on a synthetic 1x1 cm chip.

Plants ~25 flakes, plans a 44x44 snake of microscope tiles, scans them
against a replay detector served over HTTP, deduplicates sightings across
overlapping tiles, and lands everything in a sqlite catalog — then runs a
couple of catalog queries and a review action, the same operations the
review UI performs through the HTTP API.

Usage: python3 demos/03_full_chip_scan.py
"""

import tempfile
from pathlib import Path

from flakescan.catalog import CatalogStore, QueryFilters
from flakescan.protocol import InferenceServer, ReplayBackend
from flakescan.scanner import (
    LatencyModel,
    ScanPolicy,
    SceneSource,
    plan_tiles,
    replay_fixture_from_scene,
    run_scan,
)
from flakescan.synthcam import OpticsConfig, SceneSpec, generate_chip

spec = SceneSpec(extent_um=(10_000.0, 10_000.0), density_per_cm2=25.0)
scene = generate_chip(spec, seed=0, chip_id="demo-1cm")
print(f"chip {scene.chip_id}: {len(scene.flakes)} planted flakes")

# a coarser sensor keeps the demo quick; the stage geometry is unchanged
optics = OpticsConfig(fov_um=(256.0, 256.0), sensor_px=(128, 128))
plan = plan_tiles(scene.extent_um, optics.fov_um, overlap=0.1)
print(f"tile plan: {plan.grid[0]}x{plan.grid[1]} = {len(plan)} tiles, "
      f"10% overlap, snake order")

print("building replay fixture (ground truth standing in for the trained model)...")
fixture = replay_fixture_from_scene(scene, plan, optics, min_visible_area_px=1.0)

# pretend each tile costs 1 s of hardware time; the clock is simulated
latency = LatencyModel(autofocus_ms=250, capture_ms=150, transfer_ms=200,
                       record_ms=200, infer_override_ms=200)
policy = ScanPolicy(latency=latency, stage_fixed_ms=0, stage_ms_per_mm=0,
                    min_visible_area_px=1.0)

with tempfile.TemporaryDirectory() as tmp:
    store = CatalogStore(Path(tmp) / "catalog.db")
    with InferenceServer(ReplayBackend(fixture)) as server:
        print(f"detector serving at {server.endpoint}")
        report = run_scan(SceneSource(scene, optics), plan, server.endpoint,
                          store, policy)

    print()
    print(f"scan {report.scan_id} finished:")
    print(f"  tiles      {report.tiles_completed}/{report.tiles_total} "
          f"({report.tiles_failed} failed)")
    print(f"  flakes     {report.flakes_cataloged} cataloged after dedupe")
    print(f"  throughput {report.effective_fps:.2f} tiles/s simulated "
          f"({report.wall_clock_s / 60:.1f} simulated minutes for the chip)")

    print()
    print("catalog queries:")
    wte2 = store.query_flakes(QueryFilters(chip_id="demo-1cm", material="WTe2",
                                           limit=1000))
    print(f"  WTe2 flakes: {len(wte2)}")
    region = store.query_flakes(
        QueryFilters(chip_id="demo-1cm", region_um=(0, 0, 5000, 5000), limit=1000))
    print(f"  flakes in the upper-left quadrant: {len(region)}")

    first = store.query_flakes(QueryFilters(chip_id="demo-1cm", limit=1))[0]
    store.review_update(first.flake_id, "accepted", note="clean edges")
    print(f"  reviewed {first.flake_id}: "
          f"{store.get_flake(first.flake_id).review_status}")
