import json

import numpy as np
import pytest
from click.testing import CliRunner

from flakescan.cli import main
from flakescan.core import Category, Polygon
from flakescan.dataset import AnnotationRecord, DatasetIndex, ImageEntry, serialize_coco
from flakescan.protocol import InferenceServer, ReplayBackend
from flakescan.scanner import plan_tiles, replay_fixture_from_scene
from flakescan.synthcam import OpticsConfig, SceneSpec, generate_chip


@pytest.fixture
def runner():
    return CliRunner()


def small_coco(tmp_path, name, with_scores=False):
    poly = Polygon([(0, 0), (10, 0), (10, 10), (0, 10)])
    images = (ImageEntry(1, "a.png", 100, 100, "graphene"),
              ImageEntry(2, "b.png", 100, 100, "graphene"))
    anns = (
        AnnotationRecord(1, 1, Category.from_name("graphene_few"), poly, poly.bbox(), 100.0),
        AnnotationRecord(2, 2, Category.from_name("graphene_mono"), poly, poly.bbox(), 100.0),
    )
    data = serialize_coco(DatasetIndex(images, anns))
    if with_scores:
        doc = json.loads(data)
        for a in doc["annotations"]:
            a["score"] = 0.9
        data = json.dumps(doc).encode()
    path = tmp_path / name
    path.write_bytes(data)
    return path


def test_eval(runner, tmp_path):
    gt = small_coco(tmp_path, "gt.json")
    pred = small_coco(tmp_path, "pred.json", with_scores=True)
    out = tmp_path / "metrics.json"
    res = runner.invoke(main, ["eval", "--pred", str(pred), "--gt", str(gt),
                               "--json-out", str(out)])
    assert res.exit_code == 0, res.output
    assert "precision = 1.000000000" in res.output
    payload = json.loads(out.read_text())
    assert payload["confusion"] == {"tp": 2, "fp": 0, "fn": 0, "tn": 0}
    assert payload["map"] == 1.0


def test_loss(runner, tmp_path):
    pred = tmp_path / "pred.json"
    gt = tmp_path / "gt.json"
    pred.write_text(json.dumps({
        "probs": [0.5, 0.5], "box": [0.5, 0.0, 0.0, 0.0],
        "mask": [[0.9, 0.1], [0.8, 0.2]],
    }))
    gt.write_text(json.dumps({
        "true_class": 0, "box": [0.0, 0.0, 0.0, 0.0],
        "mask": [[1, 0], [1, 0]],
    }))
    res = runner.invoke(main, ["loss", "--pred", str(pred), "--gt", str(gt)])
    assert res.exit_code == 0, res.output
    assert "L_cls  = 0.693147" in res.output
    assert "L_box  = 0.125000" in res.output
    assert "L_total" in res.output


def test_dataset_round_trip_and_stats(runner, tmp_path):
    coco = small_coco(tmp_path, "ds.json")
    lt = tmp_path / "lt.json"
    res = runner.invoke(main, ["dataset", "convert", str(coco), str(lt),
                               "--format", "labeltool"])
    assert res.exit_code == 0, res.output
    docs = json.loads(lt.read_text())
    assert len(docs) == 2 and docs[0]["material"] == "graphene"

    back = tmp_path / "back.json"
    res = runner.invoke(main, ["dataset", "convert", str(lt), str(back),
                               "--format", "coco"])
    assert res.exit_code == 0, res.output
    assert len(json.loads(back.read_text())["annotations"]) == 2

    res = runner.invoke(main, ["dataset", "stats", str(coco)])
    assert res.exit_code == 0, res.output
    assert "graphene" in res.output

    res = runner.invoke(main, ["dataset", "split", str(coco), "--fraction", "0.5",
                               "--train-out", str(tmp_path / "tr.json"),
                               "--test-out", str(tmp_path / "te.json")])
    assert res.exit_code == 0, res.output
    assert "train 1 images / test 1 images" in res.output

    res = runner.invoke(main, ["dataset", "plan"])
    assert res.exit_code == 0, res.output
    plan = json.loads(res.output)
    assert len(plan["stages"]) == 4


def test_detect_rule(runner, tmp_path, illumination_fixture):
    import cv2

    from flakescan.synthcam import render_tile

    scene, optics, params = illumination_fixture
    img, _ = render_tile(scene, (0.0, 0.0), optics)
    img_path = tmp_path / "tile.png"
    cv2.imwrite(str(img_path), img[:, :, ::-1])
    params_path = tmp_path / "params.json"
    params_path.write_text(json.dumps(params.to_dict()))
    res = runner.invoke(main, ["detect-rule", "--params", str(params_path), str(img_path)])
    assert res.exit_code == 0, res.output
    assert "1 detections" in res.output
    assert "WTe2_few" in res.output


def test_scan(runner, tmp_path):
    spec = {"extent_um": [600.0, 600.0], "density_per_cm2": 3 / (0.06 ** 2),
            "materials": ["WTe2"], "radius_range_um": [15.0, 30.0]}
    spec_path = tmp_path / "chip.json"
    spec_path.write_text(json.dumps(spec))
    from flakescan.synthcam import load_scene_spec

    scene = generate_chip(load_scene_spec(spec_path), seed=0)
    optics = OpticsConfig(fov_um=(256.0, 256.0), sensor_px=(256, 256))
    plan = plan_tiles(scene.extent_um, optics.fov_um, 0.1)
    fixture = replay_fixture_from_scene(scene, plan, optics)
    with InferenceServer(ReplayBackend(fixture)) as server:
        res = runner.invoke(main, [
            "scan", "--chip", str(spec_path), "--detector", server.endpoint,
            "--out", str(tmp_path / "cat.db"), "--sensor", "256",
            "--report-out", str(tmp_path / "report.json"),
        ])
    assert res.exit_code == 0, res.output
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["tiles_failed"] == 0
    assert report["flakes_cataloged"] == len(scene.flakes)
