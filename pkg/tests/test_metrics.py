import itertools

import numpy as np
import pytest

from flakescan.core import BBox, BitMask, Category, Detection, Polygon
from flakescan.metrics import (
    ConfusionCounts,
    average_precision,
    iou_box,
    iou_mask,
    map_at,
    match_detections,
    per_image_confusion,
    precision_recall,
)


def det(material, thickness, score, box):
    return Detection(
        Category.from_name(f"{material}_{thickness}"),
        score,
        box,
        mask_polygon=Polygon(
            [(box.x, box.y), (box.x + box.w, box.y), (box.x + box.w, box.y + box.h), (box.x, box.y + box.h)]
        ),
    )


class TestIouBox:
    def test_identical(self):
        b = BBox(1, 2, 3, 4)
        assert iou_box(b, b) == 1.0

    def test_disjoint(self):
        assert iou_box(BBox(0, 0, 1, 1), BBox(5, 5, 1, 1)) == 0.0

    def test_partial_overlap(self):
        assert iou_box(BBox(0, 0, 2, 2), BBox(1, 1, 2, 2)) == pytest.approx(1 / 7)

    def test_degenerate(self):
        assert iou_box(BBox(0, 0, 0, 0), BBox(0, 0, 0, 0)) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a = BBox(*rng.uniform(0, 10, 2), *rng.uniform(0.1, 5, 2))
            b = BBox(*rng.uniform(0, 10, 2), *rng.uniform(0.1, 5, 2))
            assert iou_box(a, b) == pytest.approx(iou_box(b, a))
            assert 0.0 <= iou_box(a, b) <= 1.0


class TestIouMask:
    def test_row_vs_column(self):
        a = BitMask(np.array([[1, 1], [0, 0]], dtype=bool))
        b = BitMask(np.array([[1, 0], [1, 0]], dtype=bool))
        assert iou_mask(a, b) == pytest.approx(1 / 3)

    def test_equal_nonempty(self):
        a = BitMask(np.array([[1, 0], [0, 1]], dtype=bool))
        assert iou_mask(a, a) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            iou_mask(BitMask.zeros(2, 2), BitMask.zeros(3, 3))

    def test_matches_popcount_bruteforce(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = rng.random((8, 8)) < 0.4
            b = rng.random((8, 8)) < 0.4
            inter = sum(1 for j in range(8) for i in range(8) if a[j, i] and b[j, i])
            union = sum(1 for j in range(8) for i in range(8) if a[j, i] or b[j, i])
            expect = inter / union if union else 0.0
            assert iou_mask(BitMask(a), BitMask(b)) == pytest.approx(expect)


class TestMatching:
    def test_exact_match(self):
        m = match_detections([BBox(0, 0, 2, 2)], [0.9], [BBox(0, 0, 2, 2)], 0.5)
        assert m.pairs == ((0, 0, 1.0),)
        assert m.unmatched_detections == () and m.unmatched_gts == ()

    def test_one_to_one(self):
        dets = [BBox(0, 0, 2, 2), BBox(0.1, 0, 2, 2)]
        m = match_detections(dets, [0.5, 0.9], [BBox(0, 0, 2, 2)], 0.5)
        assert len(m.pairs) == 1
        assert m.pairs[0][0] == 1  # higher score wins
        assert m.unmatched_detections == (0,)

    def test_order_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            n = int(rng.integers(1, 5))
            dets = [BBox(*rng.uniform(0, 4, 2), 2, 2) for _ in range(n)]
            scores = list(rng.uniform(0.1, 1.0, n).round(3))
            gts = [BBox(*rng.uniform(0, 4, 2), 2, 2) for _ in range(int(rng.integers(1, 5)))]
            m1 = match_detections(dets, scores, gts, 0.3)
            perm = list(rng.permutation(n))
            m2 = match_detections([dets[i] for i in perm], [scores[i] for i in perm], gts, 0.3)
            pairs1 = sorted((gi, round(iou, 9)) for _, gi, iou in m1.pairs)
            pairs2 = sorted((gi, round(iou, 9)) for _, gi, iou in m2.pairs)
            assert pairs1 == pairs2

    def test_greedy_matches_bruteforce_count(self):
        # greedy-by-score order reproduced by explicit enumeration
        rng = np.random.default_rng(13)
        for _ in range(50):
            nd, ng = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            dets = [BBox(*rng.uniform(0, 6, 2), 2, 2) for _ in range(nd)]
            scores = list(np.round(rng.uniform(0.1, 1, nd), 3))
            gts = [BBox(*rng.uniform(0, 6, 2), 2, 2) for _ in range(ng)]
            m = match_detections(dets, scores, gts, 0.3)
            # oracle: walk detections by descending score, pick best free gt
            order = sorted(range(nd), key=lambda i: (-scores[i], i))
            taken = set()
            expected_pairs = []
            for di in order:
                cands = [
                    (iou_box(dets[di], gts[gi]), -gi)
                    for gi in range(ng)
                    if gi not in taken and iou_box(dets[di], gts[gi]) >= 0.3
                ]
                if cands:
                    best_iou, neg_gi = max(cands)
                    taken.add(-neg_gi)
                    expected_pairs.append((di, -neg_gi))
            assert sorted((di, gi) for di, gi, _ in m.pairs) == sorted(expected_pairs)

    def test_class_aware(self):
        m = match_detections(
            [BBox(0, 0, 2, 2)], [0.9], [BBox(0, 0, 2, 2)], 0.5,
            det_materials=["graphene"], gt_materials=["WTe2"],
        )
        assert m.pairs == ()


def ap_oracle(flags, n_gt):
    """Brute-force PR-envelope integration: walk every recall step and sum
    recall-delta times the max precision at or beyond that recall."""
    points = []
    tp = fp = 0
    for f in flags:
        tp, fp = tp + (1 if f else 0), fp + (0 if f else 1)
        points.append((tp / n_gt, tp / (tp + fp)))
    total = 0.0
    prev_r = 0.0
    for i, (r, _) in enumerate(points):
        if r > prev_r:
            best_p = max(p for rr, p in points[i:] if rr >= r)
            total += (r - prev_r) * best_p
            prev_r = r
    return total


class TestAveragePrecision:
    def test_single_correct(self):
        images = [([BBox(0, 0, 2, 2)], [0.9], [BBox(0, 0, 2, 2)])]
        assert average_precision(images) == 1.0

    def test_tp_fp_tp(self):
        g1, g2 = BBox(0, 0, 2, 2), BBox(10, 10, 2, 2)
        images = [([g1, BBox(50, 50, 2, 2), g2], [0.9, 0.8, 0.7], [g1, g2])]
        assert average_precision(images) == pytest.approx(0.5 * 1.0 + 0.5 * (2 / 3))

    def test_score_rescale_invariance(self):
        g = BBox(0, 0, 2, 2)
        images1 = [([g, BBox(9, 9, 1, 1)], [0.8, 0.4], [g])]
        images2 = [([g, BBox(9, 9, 1, 1)], [0.4, 0.2], [g])]
        assert average_precision(images1) == average_precision(images2)

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(17)
        for _ in range(500):
            ng = int(rng.integers(1, 5))
            nd = int(rng.integers(1, 7))
            gts = [BBox(i * 10, 0, 2, 2) for i in range(ng)]
            dets, scores = [], []
            for _ in range(nd):
                if rng.random() < 0.5:
                    dets.append(gts[int(rng.integers(0, ng))])
                else:
                    dets.append(BBox(rng.uniform(100, 200), 50, 2, 2))
                scores.append(float(np.round(rng.uniform(0.01, 1), 4)))
            images = [(dets, scores, gts)]
            got = average_precision(images)
            # replicate the flags the matcher assigns, then integrate
            m = match_detections(dets, scores, gts, 0.5)
            matched = {di for di, _, _ in m.pairs}
            order = sorted(range(nd), key=lambda i: (-scores[i], 0, i))
            flags = [i in matched for i in order]
            assert got == pytest.approx(ap_oracle(flags, ng), abs=1e-12)


class TestMapAt:
    def test_per_category_and_mean(self):
        g = BBox(0, 0, 2, 2)
        images = [
            ([det("graphene", "mono", 0.9, g)], [("graphene", g)]),
            ([det("WTe2", "few", 0.9, BBox(50, 50, 2, 2))], [("WTe2", BBox(0, 0, 2, 2))]),
        ]
        report = map_at(images, by="material")
        assert report.per_category["graphene"] == 1.0
        assert report.per_category["WTe2"] == 0.0
        assert report.mean == pytest.approx(0.5)

    def test_zero_gt_category_excluded(self):
        g = BBox(0, 0, 2, 2)
        images = [([det("hBN", "mono", 0.9, g)], [("graphene", g)])]
        report = map_at(images, by="material")
        assert "hBN" not in report.per_category
        assert "hBN" in report.empty_categories


class TestPerImageConfusion:
    def test_one_per_bucket(self):
        g = BBox(0, 0, 2, 2)
        images = [
            ([("graphene", g)], [det("graphene", "mono", 0.9, g)]),  # TP
            ([], [det("graphene", "mono", 0.9, g)]),  # FP
            ([("graphene", g)], []),  # FN
        ]
        c = per_image_confusion(images)
        assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 1, 0)

    def test_empty(self):
        c = per_image_confusion([])
        assert (c.tp, c.fp, c.fn, c.tn) == (0, 0, 0, 0)

    def test_wrong_material_is_fn(self):
        g = BBox(0, 0, 2, 2)
        c = per_image_confusion([([("graphene", g)], [det("hBN", "mono", 0.9, g)])])
        assert (c.tp, c.fn) == (0, 1)

    def test_twenty_image_fixture_matches_hand_classification(self):
        rng = np.random.default_rng(23)
        images = []
        expected = ConfusionCounts()
        for _ in range(20):
            has_gt = rng.random() < 0.6
            g = BBox(float(rng.uniform(0, 20)), float(rng.uniform(0, 20)), 3, 3)
            gts = [("WTe2", g)] if has_gt else []
            kind = rng.integers(0, 3)
            if kind == 0:
                dets = []
            elif kind == 1:
                dets = [det("WTe2", "few", 0.8, g)]  # on the gt position
            else:
                dets = [det("WTe2", "few", 0.8, BBox(g.x + 50, g.y + 50, 3, 3))]
            images.append((gts, dets))
            # hand-rule the bucket
            if has_gt:
                correct = kind == 1
                expected = expected + (ConfusionCounts(tp=1) if correct else ConfusionCounts(fn=1))
            else:
                expected = expected + (ConfusionCounts(fp=1) if dets else ConfusionCounts(tn=1))
        c = per_image_confusion(images)
        assert c == expected
        assert c.total == 20


class TestPrecisionRecall:
    def test_wte2_table(self):
        pr = precision_recall(ConfusionCounts(tp=162, fp=146, fn=6, tn=2393))
        assert pr.precision == pytest.approx(0.525974026, abs=1e-9)
        assert pr.recall == pytest.approx(0.964285714, abs=1e-9)

    def test_graphene_table(self):
        pr = precision_recall(ConfusionCounts(tp=823, fp=40, fn=17, tn=1509))
        assert pr.precision == pytest.approx(0.953650058, abs=1e-9)
        assert pr.recall == pytest.approx(0.979761905, abs=1e-9)

    def test_perfect(self):
        pr = precision_recall(ConfusionCounts(tp=1))
        assert (pr.precision, pr.recall) == (1.0, 1.0)

    def test_undefined_markers(self):
        pr = precision_recall(ConfusionCounts(tn=5))
        assert pr.precision is None and pr.recall is None
