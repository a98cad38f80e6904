"""Tour of the evaluation and loss formulas.

Runs the precision/recall computation on the confusion counts reported for
the trained WTe2 and graphene detectors, then walks through the multitask
loss on a tiny hand-made prediction.

Usage: python3 demos/01_metrics_and_losses.py
"""

import numpy as np

from flakescan.losses import multitask_loss
from flakescan.metrics import ConfusionCounts, average_precision, precision_recall
from flakescan.core import BBox

print("=== Detector quality from published confusion counts ===")
for name, counts in [
    ("WTe2", ConfusionCounts(tp=162, fp=146, fn=6, tn=2393)),
    ("graphene", ConfusionCounts(tp=823, fp=40, fn=17, tn=1509)),
]:
    pr = precision_recall(counts)
    print(f"{name:>9}: precision {pr.precision:.9f}  recall {pr.recall:.9f}  "
          f"({counts.total} images)")

print()
print("=== Average precision on a toy detection ranking ===")
gt = [BBox(0, 0, 10, 10), BBox(100, 0, 10, 10), BBox(200, 0, 10, 10)]
dets = [gt[0], BBox(50, 50, 10, 10), gt[1]]  # hit, miss, hit
scores = [0.9, 0.8, 0.7]
ap = average_precision([(dets, scores, gt)])
print(f"ranking TP, FP, TP over 3 ground truths -> AP = {ap:.4f}")

print()
print("=== Multitask loss breakdown ===")
probs = np.array([0.1, 0.7, 0.2])      # classifier softmax output
pred_box = np.array([0.3, -0.2, 0.0, 0.1])
true_box = np.zeros(4)
pred_mask = np.clip(np.random.default_rng(0).uniform(0.1, 0.9, (8, 8)), 0, 1)
true_mask = (pred_mask > 0.5).astype(float)  # mostly agreeing target
b = multitask_loss(probs, 1, pred_box, true_box, pred_mask, true_mask)
print(f"L_cls  = {b.l_cls:.4f}   (-log p of the true class)")
print(f"L_box  = {b.l_box:.4f}   (smooth-L1 over 4 box offsets)")
print(f"L_mask = {b.l_mask:.4f}   (mean binary cross-entropy over the ROI)")
print(f"L_total = {b.l_total:.4f} = 0.6*L_cls + L_box + L_mask")
