"""Scalar evaluation metrics: MnRE, ALDE, object material F1, ratings KL,
and binary precision/recall/F1/accuracy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

PROB_FLOOR = 1e-7


def mnre(p: float, t: float) -> float:
    """Min Ratio Error: min(p/t, t/p). 1.0 is perfect, scale-invariant."""
    if p <= 0 or t <= 0:
        raise InvalidArgument(f"mnre requires positive inputs, got p={p}, t={t}")
    return min(p / t, t / p)


def alde(p: float, t: float) -> float:
    """Absolute log-difference error: |ln p - ln t|. Equals -ln(mnre)."""
    if p <= 0 or t <= 0:
        raise InvalidArgument(f"alde requires positive inputs, got p={p}, t={t}")
    return abs(math.log(p) - math.log(t))


@dataclass
class RatingsDistribution:
    """Distribution over 1..5 star ratings plus the review count behind it."""

    probs: np.ndarray  # 5 floats, >= 0, summing to 1
    n_reviews: int = 0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (5,):
            raise InvalidArgument("ratings distribution needs exactly 5 entries")
        if np.any(self.probs < 0):
            raise InvalidArgument("ratings probabilities must be non-negative")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-9:
            raise InvalidArgument(f"ratings probabilities sum to {total}, not 1")
        if self.n_reviews < 0:
            raise InvalidArgument("n_reviews must be >= 0")

    @classmethod
    def from_hist(cls, hist) -> "RatingsDistribution":
        hist = np.asarray(hist, dtype=np.float64)
        n = int(hist.sum())
        if n == 0:
            return cls(np.full(5, 0.2), 0)
        return cls(hist / hist.sum(), n)


def _clip_renorm(probs: np.ndarray) -> np.ndarray:
    q = np.maximum(np.asarray(probs, dtype=np.float64), PROB_FLOOR)
    return q / q.sum()


def ratings_kl(true: RatingsDistribution, pred: RatingsDistribution) -> float:
    """KL(true || pred) with pred clipped to >= 1e-7 and renormalized."""
    q = _clip_renorm(pred.probs)
    p = true.probs
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def weighted_mean_kl(batch) -> float:
    """Weight-normalized mean of ratings_kl with weight ln(1 + n_reviews).

    Items with zero reviews carry zero weight and drop out of the mean.
    """
    num = 0.0
    den = 0.0
    for true, pred in batch:
        w = math.log1p(true.n_reviews)
        num += w * ratings_kl(true, pred)
        den += w
    if den == 0.0:
        return 0.0
    return num / den


def object_material_f1(pred_probs, truth_positive, truth_negative, threshold: float = 0.5) -> float:
    """Per-object F1 of the positive material class.

    ``pred_probs`` maps node id to probability; only nodes present in
    ``truth_positive`` or ``truth_negative`` enter the confusion counts
    (the same masking rule as the masked BCE loss).
    """
    truth_positive = set(truth_positive)
    truth_negative = set(truth_negative)
    if not truth_positive and not truth_negative:
        raise InvalidArgument("object has no labeled material nodes")
    if not truth_positive:
        raise InvalidArgument("object needs at least one POSITIVE material node")
    tp = fp = fn = 0
    for node in truth_positive:
        if pred_probs.get(node, 0.0) >= threshold:
            tp += 1
        else:
            fn += 1
    for node in truth_negative:
        if pred_probs.get(node, 0.0) >= threshold:
            fp += 1
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def dataset_material_f1(per_object) -> float:
    """Mean of per-object F1 scores."""
    scores = [object_material_f1(p, tp, tn) for p, tp, tn in per_object]
    if not scores:
        raise InvalidArgument("empty batch")
    return float(np.mean(scores))


@dataclass
class BinaryPRF:
    """Precision/recall/F1/accuracy; a None field means the denominator was 0."""

    precision: float | None
    recall: float | None
    f1: float | None
    accuracy: float | None

    @property
    def undefined(self) -> list[str]:
        return [k for k in ("precision", "recall", "f1", "accuracy") if getattr(self, k) is None]


def binary_prf(tp: int, fp: int, fn: int, tn: int) -> BinaryPRF:
    """Standard binary classification ratios from confusion counts."""
    if min(tp, fp, fn, tn) < 0:
        raise InvalidArgument("confusion counts must be non-negative")
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    if precision is not None and recall is not None and (precision + recall) > 0:
        f1 = 2 * precision * recall / (precision + recall)
    elif precision is not None and recall is not None:
        f1 = 0.0
    else:
        f1 = None
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total > 0 else None
    return BinaryPRF(precision, recall, f1, accuracy)
