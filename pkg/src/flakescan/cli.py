"""Command-line entry points: evaluation, loss fixtures, dataset tooling,
augmentation, the rule-based detector, scans, and servers."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import cv2
import numpy as np

from . import augment as augment_mod
from . import catalog as catalog_mod
from . import dataset as dataset_mod
from . import losses, metrics, protocol, ruledet, scanner, synthcam
from .core import BBox, Category, Detection, Polygon


@click.group()
def main():
    """Desk-scale automated flake-search pipeline."""


# --- eval ---------------------------------------------------------------------

@main.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--iou", default=0.5, show_default=True)
@click.option("--json-out", "json_out", type=click.Path(), default=None)
def eval_cmd(pred_path, gt_path, iou, json_out):
    """Evaluate predictions against ground truth (both COCO files;
    prediction annotations carry a "score" field)."""
    gt = dataset_mod.parse_coco(Path(gt_path).read_bytes())
    pred_doc = json.loads(Path(pred_path).read_text())
    pred = dataset_mod.parse_coco(Path(pred_path).read_bytes())
    scores = {a["id"]: a.get("score", 1.0) for a in pred_doc["annotations"]}

    image_ids = sorted({im.id for im in gt.images})
    images_map, images_conf = [], []
    for iid in image_ids:
        gts = [
            (a.category.material.value, a.bbox) for a in gt.annotations if a.image_id == iid
        ]
        gt_pairs = [(a.category.name, a.bbox) for a in gt.annotations if a.image_id == iid]
        dets = [
            Detection(a.category, float(scores.get(a.id, 1.0)), a.bbox, mask_polygon=a.polygon)
            for a in pred.annotations
            if a.image_id == iid
        ]
        images_map.append((dets, gt_pairs))
        images_conf.append((gts, dets))

    map_report = metrics.map_at(images_map, iou_threshold=iou, by="category")
    counts = metrics.per_image_confusion(images_conf, iou_threshold=iou)
    pr = metrics.precision_recall(counts)

    click.echo(f"images evaluated: {len(image_ids)}")
    for name, ap in sorted(map_report.per_category.items()):
        click.echo(f"AP[{name}] = {ap:.4f}")
    mean = f"{map_report.mean:.4f}" if map_report.mean is not None else "n/a"
    click.echo(f"mAP@IoU{int(iou * 100)}% = {mean}")
    click.echo(f"confusion: tp={counts.tp} fp={counts.fp} fn={counts.fn} tn={counts.tn}")
    click.echo(f"precision = {_fmt(pr.precision)}  recall = {_fmt(pr.recall)}")
    if json_out:
        payload = {
            "per_category_ap": map_report.per_category,
            "map": map_report.mean,
            "confusion": {"tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn},
            "precision": pr.precision,
            "recall": pr.recall,
        }
        Path(json_out).write_text(json.dumps(payload, indent=2))


def _fmt(v):
    return "undefined" if v is None else f"{v:.9f}"


# --- loss ---------------------------------------------------------------------

@main.command("loss")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
def loss_cmd(pred_path, gt_path):
    """Print a loss breakdown for a prediction/target fixture pair.

    Prediction file: {"probs": [...], "box": [4], "mask": [[...]]}.
    Target file: {"true_class": u, "box": [4], "mask": [[...]]}.
    """
    pred = json.loads(Path(pred_path).read_text())
    gt = json.loads(Path(gt_path).read_text())
    breakdown = losses.multitask_loss(
        pred["probs"],
        gt["true_class"],
        pred["box"],
        gt["box"],
        np.asarray(pred["mask"], dtype=float),
        np.asarray(gt["mask"], dtype=float),
    )
    click.echo(f"L_cls  = {breakdown.l_cls:.6f}")
    click.echo(f"L_box  = {breakdown.l_box:.6f}")
    click.echo(f"L_mask = {breakdown.l_mask:.6f}")
    click.echo(f"L_total = {breakdown.l_total:.6f}")
    if breakdown.clipped:
        click.echo("note: a probability hit the epsilon clip")


# --- dataset ------------------------------------------------------------------

@main.group("dataset")
def dataset_group():
    """Annotation toolchain."""


@dataset_group.command("convert")
@click.argument("src", type=click.Path(exists=True))
@click.argument("dst", type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["coco", "labeltool"]), required=True,
              help="output format")
def dataset_convert(src, dst, fmt):
    data = Path(src).read_bytes()
    if fmt == "labeltool":
        idx = dataset_mod.parse_coco(data)
        img_names = {im.id: im.file_name or str(im.id) for im in idx.images}
        docs = []
        for a in idx.annotations:
            docs.append(
                {
                    "image_ref": img_names[a.image_id],
                    "material": a.category.material.value,
                    "thickness": a.category.thickness.value,
                    "polygon": [list(xy) for xy in a.polygon.vertices],
                    "source": "human",
                }
            )
        Path(dst).write_text(json.dumps(docs, indent=2))
    else:
        docs = json.loads(data)
        pairs = dataset_mod.import_labeltool(docs)
        refs = {}
        for ref, ann in pairs:
            refs.setdefault(ref, ann.image_id)
        images = tuple(
            dataset_mod.ImageEntry(id=iid, file_name=ref, width=1024, height=1024)
            for ref, iid in refs.items()
        )
        idx = dataset_mod.DatasetIndex(images, tuple(a for _, a in pairs))
        Path(dst).write_bytes(dataset_mod.serialize_coco(idx))
    click.echo(f"wrote {dst}")


@dataset_group.command("split")
@click.argument("src", type=click.Path(exists=True))
@click.option("--fraction", default=0.8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--train-out", required=True, type=click.Path())
@click.option("--test-out", required=True, type=click.Path())
def dataset_split(src, fraction, seed, train_out, test_out):
    idx = dataset_mod.parse_coco(Path(src).read_bytes())
    result = dataset_mod.split_dataset(idx, fraction, seed)
    Path(train_out).write_bytes(dataset_mod.serialize_coco(result.train))
    Path(test_out).write_bytes(dataset_mod.serialize_coco(result.test))
    click.echo(
        f"train {len(result.train.images)} images / test {len(result.test.images)} images (seed {seed})"
    )


@dataset_group.command("stats")
@click.argument("src", type=click.Path(exists=True))
def dataset_stats_cmd(src):
    idx = dataset_mod.parse_coco(Path(src).read_bytes())
    stats = dataset_mod.dataset_stats(idx)
    click.echo(f"{'material':<10} {'images':>8} {'objects':>8}")
    for material, (n_img, n_ann) in stats.items():
        click.echo(f"{material:<10} {n_img:>8} {n_ann:>8}")


@dataset_group.command("plan")
@click.option("--source", "source_weights", default="coco",
              type=click.Choice(["coco", "coco+2dmat"]), show_default=True)
@click.option("--out", type=click.Path(), default=None)
def dataset_plan(source_weights, out):
    plan = dataset_mod.emit_training_plan(source_weights=source_weights)
    text = json.dumps(plan.to_dict(), indent=2)
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


# --- augment ------------------------------------------------------------------

@main.command("augment")
@click.argument("image_path", type=click.Path(exists=True))
@click.argument("labels_path", type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out-prefix", default="augmented", show_default=True)
def augment_cmd(image_path, labels_path, seed, config_path, out_prefix):
    """Augment one image + labeltool annotation file."""
    img = cv2.imread(image_path)[:, :, ::-1]
    docs = json.loads(Path(labels_path).read_text())
    polys = [Polygon(d["polygon"]) for d in docs]
    cfg = augment_mod.AugmentConfig(**json.loads(Path(config_path).read_text())) if config_path \
        else augment_mod.AugmentConfig()
    out_img, anns, dropped = augment_mod.augment(img, polys, cfg, seed)
    cv2.imwrite(f"{out_prefix}.png", out_img[:, :, ::-1])
    kept_docs = [d for i, d in enumerate(docs) if i not in dropped]
    for d, ann in zip(kept_docs, anns):
        d["polygon"] = [list(xy) for xy in ann.polygon.vertices]
    Path(f"{out_prefix}.json").write_text(json.dumps(kept_docs, indent=2))
    click.echo(f"wrote {out_prefix}.png / {out_prefix}.json ({len(dropped)} annotations dropped)")


# --- detect-rule --------------------------------------------------------------

@main.command("detect-rule")
@click.option("--params", "params_path", required=True, type=click.Path(exists=True))
@click.argument("images", nargs=-1, required=True, type=click.Path(exists=True))
def detect_rule_cmd(params_path, images):
    params = ruledet.RuleParams.load(params_path)
    for path in images:
        img = cv2.imread(path)[:, :, ::-1]
        dets = ruledet.detect_rule_based(img, params)
        click.echo(f"{path}: {len(dets)} detections")
        for d in dets:
            click.echo(f"  {d.category.name} bbox={d.bbox.as_list()}")


# --- scan ---------------------------------------------------------------------

@main.command("scan")
@click.option("--chip", "chip_spec", required=True, type=click.Path(exists=True),
              help="scene spec JSON")
@click.option("--detector", "detector_url", required=True)
@click.option("--out", "catalog_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--fov", default=256.0, show_default=True, help="field of view, µm")
@click.option("--sensor", default=1024, show_default=True, help="sensor side, px")
@click.option("--overlap", default=0.1, show_default=True)
@click.option("--threshold", default=0.5, show_default=True)
@click.option("--pipeline/--no-pipeline", default=False, show_default=True)
@click.option("--report-out", type=click.Path(), default=None)
def scan_cmd(chip_spec, detector_url, catalog_path, seed, fov, sensor, overlap,
             threshold, pipeline, report_out):
    """Scan a synthetic chip against a detector endpoint."""
    spec = synthcam.load_scene_spec(chip_spec)
    scene = synthcam.generate_chip(spec, seed=seed)
    optics = synthcam.OpticsConfig(fov_um=(fov, fov), sensor_px=(sensor, sensor))
    plan = scanner.plan_tiles(scene.extent_um, optics.fov_um, overlap)
    store = catalog_mod.CatalogStore(catalog_path)
    policy = scanner.ScanPolicy(confidence_threshold=threshold, pipeline=pipeline)
    source = scanner.SceneSource(scene, optics)
    report = scanner.run_scan(source, plan, detector_url, store, policy)
    click.echo(
        f"scan {report.scan_id}: {report.tiles_completed}/{report.tiles_total} tiles, "
        f"{report.tiles_failed} failed, {report.flakes_cataloged} flakes, "
        f"{report.effective_fps:.2f} fps (simulated {report.wall_clock_s:.0f} s)"
    )
    if report_out:
        Path(report_out).write_text(json.dumps(report.to_dict(), indent=2))


# --- servers ------------------------------------------------------------------

@main.command("serve-detector")
@click.option("--backend", type=click.Choice(["rule"]), default="rule", show_default=True)
@click.option("--params", "params_path", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8701, show_default=True)
def serve_detector(backend, params_path, host, port):
    """Run an inference server with the rule-based backend."""
    params = ruledet.RuleParams.load(params_path)
    server = protocol.InferenceServer(protocol.RuleBackend(params), host, port)
    click.echo(f"serving {backend} backend at {server.endpoint}")
    try:
        server.httpd.serve_forever()
    except KeyboardInterrupt:
        server.stop()


@main.command("serve")
@click.option("--catalog", "catalog_path", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8700, show_default=True)
@click.option("--ui", "ui_dir", type=click.Path(exists=True), default=None,
              help="directory of built review-UI assets to serve statically")
def serve_cmd(catalog_path, host, port, ui_dir):
    """Run the catalog HTTP API (and optionally the review UI)."""
    import uvicorn

    store = catalog_mod.CatalogStore(catalog_path)
    app = catalog_mod.make_app(store, scan_controller=None, static_dir=ui_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
