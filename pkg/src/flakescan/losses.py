"""Reference multitask loss: classification, box regression, mask BCE.

Pure formula-level evaluation on given predictions, usable to validate an
external trainer.  Natural logarithm throughout; probabilities are clipped
at 1e-12 and the clip is flagged in the result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

EPS = 1e-12

DEFAULT_ALPHA = 0.6
DEFAULT_BETA = 1.0
DEFAULT_GAMMA = 1.0


@dataclass(frozen=True)
class LossWeights:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    l_cls: float
    l_box: float
    l_mask: float
    l_total: float
    clipped: bool = False  # a probability hit the epsilon clip


def smooth_l1(x: float) -> float:
    """0.5 x^2 inside |x| < 1, |x| - 0.5 outside; continuous and C1 at 1."""
    ax = abs(x)
    if ax < 1.0:
        return 0.5 * x * x
    return ax - 0.5


def loss_cls(probs: Sequence[float], true_index: int) -> Tuple[float, bool]:
    """Negative log-likelihood of the true class.

    Returns (loss, clipped) where clipped marks an epsilon-clipped zero
    probability.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1:
        raise ValueError("probability distribution must be 1D")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {p.sum()}, expected 1")
    if not 0 <= true_index < p.size:
        raise IndexError(f"class index {true_index} out of range for {p.size} classes")
    pu = float(p[true_index])
    clipped = pu < EPS
    return -float(np.log(max(pu, EPS))), clipped


def loss_box(pred: Sequence[float], target: Sequence[float]) -> float:
    """Sum of smooth-L1 over the (x, y, w, h) regression offsets."""
    t = np.asarray(pred, dtype=float)
    v = np.asarray(target, dtype=float)
    if t.shape != (4,) or v.shape != (4,):
        raise ValueError("box deltas must each have 4 components (x, y, w, h)")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
        raise ValueError("box deltas must be finite")
    return float(sum(smooth_l1(d) for d in (t - v)))


def loss_mask(predicted: np.ndarray, target: np.ndarray) -> Tuple[float, bool]:
    """Average binary cross-entropy over an m x m ROI mask pair."""
    yhat = np.asarray(predicted, dtype=float)
    y = np.asarray(target, dtype=float)
    if yhat.shape != y.shape:
        raise ValueError(f"mask shape mismatch: {yhat.shape} vs {y.shape}")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("target mask must be binary")
    clipped = bool(np.any(yhat < EPS) or np.any(yhat > 1.0 - EPS))
    yc = np.clip(yhat, EPS, 1.0 - EPS)
    bce = -(y * np.log(yc) + (1.0 - y) * np.log(1.0 - yc))
    return float(bce.mean()), clipped


def total_loss(
    l_cls: float,
    l_box: float,
    l_mask: float,
    weights: LossWeights = LossWeights(),
    clipped: bool = False,
) -> LossBreakdown:
    """Weighted sum alpha*cls + beta*box + gamma*mask, defaults (0.6, 1, 1)."""
    if l_cls < 0 or l_box < 0 or l_mask < 0:
        raise ValueError("loss components must be non-negative")
    total = weights.alpha * l_cls + weights.beta * l_box + weights.gamma * l_mask
    return LossBreakdown(l_cls, l_box, l_mask, total, clipped)


def multitask_loss(
    probs: Sequence[float],
    true_index: int,
    box_pred: Sequence[float],
    box_target: Sequence[float],
    mask_pred: np.ndarray,
    mask_target: np.ndarray,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """Evaluate all three components for one prediction/target pair."""
    lc, clip_c = loss_cls(probs, true_index)
    lb = loss_box(box_pred, box_target)
    lm, clip_m = loss_mask(mask_pred, mask_target)
    return total_loss(lc, lb, lm, weights, clipped=clip_c or clip_m)
