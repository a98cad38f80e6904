import math

import numpy as np
import pytest

from flakescan.catalog import CatalogStore, FlakeRecord, QueryFilters
from flakescan.core import BBox, Polygon
from flakescan.metrics import iou_box
from flakescan.protocol import InferenceServer, ReplayBackend
from flakescan.scanner import (
    LatencyModel,
    ScanController,
    ScanError,
    ScanPolicy,
    SceneSource,
    dedupe,
    pixel_to_stage,
    plan_tiles,
    replay_fixture_from_scene,
    run_scan,
    stage_to_pixel,
)
from flakescan.synthcam import ChipScene, Flake, OpticsConfig, SceneSpec, generate_chip


class TestPlanTiles:
    def test_paper_scale_grid(self):
        plan = plan_tiles((10_000.0, 10_000.0), (256.0, 256.0), 0.1)
        assert plan.grid == (44, 44)
        assert len(plan) == 1936

    def test_single_tile(self):
        plan = plan_tiles((256.0, 256.0), (256.0, 256.0), 0.3)
        assert len(plan) == 1
        assert plan.positions_um[0] == (0.0, 0.0)

    def test_snake_ordering(self):
        plan = plan_tiles((1000.0, 1000.0), (300.0, 300.0), 0.0)
        nx, ny = plan.grid
        rows = [plan.positions_um[i * nx : (i + 1) * nx] for i in range(ny)]
        assert [p[0] for p in rows[0]] == sorted(p[0] for p in rows[0])
        assert [p[0] for p in rows[1]] == sorted((p[0] for p in rows[1]), reverse=True)

    def test_fov_exceeds_region(self):
        with pytest.raises(ScanError):
            plan_tiles((100.0, 100.0), (256.0, 256.0), 0.1)

    def test_coverage_random_configs(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            region = (float(rng.uniform(500, 3000)), float(rng.uniform(500, 3000)))
            fov = float(rng.uniform(100, min(region)))
            overlap = float(rng.uniform(0, 0.5))
            plan = plan_tiles(region, (fov, fov), overlap)
            # union of FOVs covers the region: check a point grid
            xs = np.linspace(0, region[0] - 1e-9, 40)
            ys = np.linspace(0, region[1] - 1e-9, 40)
            for x in xs:
                for y in ys:
                    assert any(
                        px <= x <= px + fov and py <= y <= py + fov
                        for px, py in plan.positions_um
                    ), (region, fov, overlap, x, y)

    def test_no_tile_outside_region(self):
        plan = plan_tiles((1000.0, 700.0), (256.0, 256.0), 0.15)
        for x, y in plan.positions_um:
            assert 0 <= x <= 1000 - 256 + 1e-9
            assert 0 <= y <= 700 - 256 + 1e-9


class TestCoordinateTransforms:
    def test_example(self):
        assert pixel_to_stage((100, 200), (1000.0, 2000.0), 0.5) == (1050.0, 2100.0)

    def test_origin(self):
        assert pixel_to_stage((0, 0), (123.0, 456.0), 0.25) == (123.0, 456.0)

    def test_round_trip(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            origin = tuple(rng.uniform(0, 10_000, 2))
            upp = float(rng.uniform(0.1, 4))
            p = tuple(rng.uniform(0, 1024, 2))
            um = pixel_to_stage(p, origin, upp)
            back = stage_to_pixel(um, origin, upp)
            assert abs(back[0] - p[0]) * upp < 1e-6 + 1e-9 * um[0]
            assert abs(back[1] - p[1]) * upp < 1e-6 + 1e-9 * um[1]


def make_record(x, y, w, h, material="WTe2", score=1.0, tile="t0", chip="c"):
    poly = Polygon([(0, 0), (w, 0), (w, h), (0, h)])
    return FlakeRecord(
        chip_id=chip, material=material, thickness="few", score=score,
        centroid_um=(x + w / 2, y + h / 2), bbox_um=BBox(x, y, w, h),
        mask_polygon_px=poly, source_tile_id=tile, created_at=0.0,
    )


class TestDedupe:
    def test_same_flake_two_tiles(self):
        a = make_record(100, 100, 20, 20, tile="t0")
        b = make_record(101, 100, 20, 20, tile="t1")
        assert len(dedupe([a, b])) == 1

    def test_distant_flakes(self):
        a = make_record(0, 0, 20, 20)
        b = make_record(500, 500, 20, 20, tile="t1")
        assert len(dedupe([a, b])) == 2

    def test_different_material_not_merged(self):
        a = make_record(100, 100, 20, 20, material="WTe2")
        b = make_record(100, 100, 20, 20, material="graphene", tile="t1")
        assert len(dedupe([a, b])) == 2

    def test_order_independence(self):
        rng = np.random.default_rng(9)
        recs = [
            make_record(float(rng.uniform(0, 300)), float(rng.uniform(0, 300)), 30, 30,
                        score=float(np.round(rng.uniform(0.5, 1), 3)), tile=f"t{i}")
            for i in range(12)
        ]
        ids1 = sorted(r.flake_id for r in dedupe(recs))
        perm = list(rng.permutation(len(recs)))
        ids2 = sorted(r.flake_id for r in dedupe([recs[i] for i in perm]))
        assert ids1 == ids2

    def test_component_count_matches_graph_oracle(self):
        rng = np.random.default_rng(15)
        for _ in range(30):
            n = int(rng.integers(2, 10))
            recs = [
                make_record(float(rng.uniform(0, 120)), float(rng.uniform(0, 120)), 40, 40,
                            tile=f"t{i}")
                for i in range(n)
            ]
            # brute-force connected components over the IoU graph
            import networkx as nx

            g = nx.Graph()
            g.add_nodes_from(range(n))
            for i in range(n):
                for j in range(i + 1, n):
                    if iou_box(recs[i].bbox_um, recs[j].bbox_um) >= 0.3:
                        g.add_edge(i, j)
            expected = nx.number_connected_components(g)
            assert len(dedupe(recs, 0.3)) == expected


def small_scene(n_flakes=4, seed=3):
    spec = SceneSpec(
        extent_um=(1024.0, 1024.0),
        density_per_cm2=n_flakes / ((1024 / 10_000) ** 2),
        materials=("WTe2",),
        radius_range_um=(15.0, 35.0),
    )
    return generate_chip(spec, seed=seed, chip_id="mini")


def scan_setup(tmp_path, name="cat.db", scene=None, latency=None, pipeline=False,
               threshold=0.5):
    scene = scene or small_scene()
    optics = OpticsConfig(fov_um=(256.0, 256.0), sensor_px=(256, 256))
    plan = plan_tiles(scene.extent_um, optics.fov_um, 0.1)
    fixture = replay_fixture_from_scene(scene, plan, optics)
    store = CatalogStore(tmp_path / name)
    policy = ScanPolicy(
        confidence_threshold=threshold,
        latency=latency or LatencyModel(),
        pipeline=pipeline,
        stage_fixed_ms=0.0 if latency else 50.0,
        stage_ms_per_mm=0.0 if latency else 100.0,
    )
    return scene, optics, plan, fixture, store, policy


class TestRunScan:
    def test_planted_flakes_all_found_once(self, tmp_path):
        scene, optics, plan, fixture, store, policy = scan_setup(tmp_path)
        with InferenceServer(ReplayBackend(fixture)) as server:
            report = run_scan(SceneSource(scene, optics), plan, server.endpoint, store, policy)
        assert report.tiles_failed == 0
        records = store.query_flakes(QueryFilters(chip_id="mini", limit=1000))
        assert len(records) == len(scene.flakes)  # recall 1.0 after dedupe
        # every planted flake matched by exactly one record
        for flake in scene.flakes:
            fb = flake.polygon_um.bbox()
            hits = [r for r in records if iou_box(r.bbox_um, fb) >= 0.3]
            assert len(hits) == 1

    def test_empty_chip(self, tmp_path):
        scene = generate_chip(SceneSpec(extent_um=(600.0, 600.0), density_per_cm2=0.0),
                              seed=1, chip_id="empty")
        optics = OpticsConfig(fov_um=(256.0, 256.0), sensor_px=(128, 128))
        plan = plan_tiles(scene.extent_um, optics.fov_um, 0.1)
        store = CatalogStore(tmp_path / "c.db")
        with InferenceServer(ReplayBackend({})) as server:
            report = run_scan(SceneSource(scene, optics), plan, server.endpoint, store,
                              ScanPolicy())
        assert report.flakes_cataloged == 0
        assert report.tiles_failed == 0

    def test_throughput_accounting_sequential(self, tmp_path):
        lat = LatencyModel(autofocus_ms=250.0, capture_ms=150.0, transfer_ms=200.0,
                           record_ms=200.0, infer_override_ms=200.0)
        scene, optics, plan, fixture, store, policy = scan_setup(tmp_path, latency=lat)
        with InferenceServer(ReplayBackend(fixture)) as server:
            report = run_scan(SceneSource(scene, optics), plan, server.endpoint, store, policy)
        expected_s = len(plan) * 1.0  # 1000 ms per tile
        assert report.wall_clock_s == pytest.approx(expected_s, rel=0.01)
        assert report.effective_fps == pytest.approx(1.0, rel=0.05)

    def test_pipeline_bounds(self, tmp_path):
        lat = LatencyModel(autofocus_ms=400.0, capture_ms=0.0, transfer_ms=0.0,
                           record_ms=100.0, infer_override_ms=500.0)
        scene, optics, plan, fixture, store, policy = scan_setup(
            tmp_path, latency=lat, pipeline=True)
        with InferenceServer(ReplayBackend(fixture)) as server:
            report = run_scan(SceneSource(scene, optics), plan, server.endpoint, store, policy)
        n = len(plan)
        sequential_s = n * 1.0
        stage_a_total = n * 0.4
        stage_b_total = n * 0.6
        assert report.wall_clock_s <= sequential_s
        assert report.wall_clock_s >= max(stage_a_total, stage_b_total) - 1e-6

    def test_dead_endpoint_refuses_to_start(self, tmp_path):
        scene, optics, plan, fixture, store, policy = scan_setup(tmp_path)
        with pytest.raises(ScanError):
            run_scan(SceneSource(scene, optics), plan, "http://127.0.0.1:9", store, policy)

    def test_threshold_filters_low_scores(self, tmp_path):
        scene, optics, plan, fixture, store, policy = scan_setup(tmp_path, threshold=0.9)
        low_fixture = {
            tile: [
                type(d)(d.category, 0.4, d.bbox, d.mask_polygon, d.mask_rle)
                for d in dets
            ]
            for tile, dets in fixture.items()
        }
        with InferenceServer(ReplayBackend(low_fixture)) as server:
            report = run_scan(SceneSource(scene, optics), plan, server.endpoint, store, policy)
        assert report.flakes_cataloged == 0


class TestResumeEquivalence:
    def run_uninterrupted(self, tmp_path):
        scene, optics, plan, fixture, store, policy = scan_setup(tmp_path, name="base.db")
        with InferenceServer(ReplayBackend(fixture)) as server:
            run_scan(SceneSource(scene, optics), plan, server.endpoint, store, policy,
                     scan_id="s1")
        return sorted(
            (r.flake_id, r.material, r.score)
            for r in store.query_flakes(QueryFilters(limit=10_000))
        )

    def test_pause_resume_same_catalog(self, tmp_path):
        import threading

        baseline = self.run_uninterrupted(tmp_path)
        scene, optics, plan, fixture, store, policy = scan_setup(tmp_path, name="paused.db")
        controller = ScanController(policy.confidence_threshold)
        with InferenceServer(ReplayBackend(fixture)) as server:
            controller.pause()
            t = threading.Thread(
                target=run_scan,
                args=(SceneSource(scene, optics), plan, server.endpoint, store, policy),
                kwargs={"controller": controller, "scan_id": "s1"},
            )
            t.start()
            import time

            time.sleep(0.3)
            controller.resume()
            t.join(timeout=60)
            assert not t.is_alive()
        got = sorted(
            (r.flake_id, r.material, r.score)
            for r in store.query_flakes(QueryFilters(limit=10_000))
        )
        assert got == baseline

    def test_crash_restart_same_catalog(self, tmp_path):
        baseline = self.run_uninterrupted(tmp_path)
        scene, optics, plan, fixture, store, policy = scan_setup(tmp_path, name="crash.db")
        controller = ScanController(policy.confidence_threshold)
        with InferenceServer(ReplayBackend(fixture)) as server:
            # abort partway through: simulates a crash after some tiles
            import threading
            import time

            def aborter():
                time.sleep(0.2)
                controller.abort()

            threading.Thread(target=aborter).start()
            run_scan(SceneSource(scene, optics), plan, server.endpoint, store, policy,
                     controller=controller, scan_id="s1")
            store.close()
            # restart: reopen the store and resume the same scan id
            store2 = CatalogStore(tmp_path / "crash.db")
            run_scan(SceneSource(scene, optics), plan, server.endpoint, store2, policy,
                     scan_id="s1")
        got = sorted(
            (r.flake_id, r.material, r.score)
            for r in store2.query_flakes(QueryFilters(limit=10_000))
        )
        assert got == baseline
