"""Segmentation evaluation: confusion counts, derived metrics, threshold
sweeps, exact ROC/AUC, and per-sample Dice distribution statistics.

Conventions, pinned so every number is reproducible:

* thresholding is >=-inclusive everywhere;
* any metric with a zero denominator reports 0.0 (not NaN);
* F1 and Dice are both computed as 2TP / (2TP + FP + FN), making the
  Dice/F1 identity exact in floating point;
* a Dice comparison of two empty masks scores 1.0 (a correct empty
  prediction is a perfect match);
* the ROC curve is built from grouped unique scores, so its trapezoidal
  area equals the pair-ranking (Mann-Whitney) probability with ties
  counted one half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError, UndefinedMetricError
from .volume import MaskVolume, Volume


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise InvalidInputError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    f1: float
    specificity: float
    dice: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "specificity": self.specificity,
            "dice": self.dice,
        }


@dataclass(frozen=True)
class SweepEntry:
    threshold: float
    counts: ConfusionCounts
    metrics: MetricSet


@dataclass(frozen=True)
class RocCurve:
    points: np.ndarray  # (n, 2) of (fpr, tpr), sorted by fpr
    auc: float


@dataclass(frozen=True)
class DiceSummary:
    dice: tuple[float, ...]
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]


def _scores_of(probs) -> np.ndarray:
    if isinstance(probs, Volume):
        return probs.data.ravel()
    return np.asarray(probs, dtype=np.float64).ravel()


def _labels_of(truth) -> np.ndarray:
    if isinstance(truth, MaskVolume):
        return truth.data.ravel() > 0
    return np.asarray(truth).ravel() > 0


def confusion(probs, truth, threshold: float) -> ConfusionCounts:
    """Voxelwise tally of a probability map against binary truth."""
    scores = _scores_of(probs)
    labels = _labels_of(truth)
    if scores.shape != labels.shape:
        raise ShapeError(f"probs ({scores.size}) and truth ({labels.size}) sizes differ")
    if scores.size == 0:
        raise InvalidInputError("empty input")
    if scores.min() < 0.0 or scores.max() > 1.0:
        raise InvalidInputError("probabilities must lie in [0, 1]")
    if not 0.0 <= threshold <= 1.0:
        raise InvalidInputError(f"threshold must lie in [0, 1], got {threshold}")
    pred = scores >= threshold
    tp = int(np.count_nonzero(pred & labels))
    fp = int(np.count_nonzero(pred & ~labels))
    fn = int(np.count_nonzero(~pred & labels))
    tn = labels.size - tp - fp - fn
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def metric_set(c: ConfusionCounts) -> MetricSet:
    """Accuracy, precision, recall, F1, specificity, and Dice from counts."""
    if c.total == 0:
        raise InvalidInputError("cannot compute metrics from all-zero counts")
    overlap = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    return MetricSet(
        accuracy=_ratio(c.tp + c.tn, c.total),
        precision=_ratio(c.tp, c.tp + c.fp),
        recall=_ratio(c.tp, c.tp + c.fn),
        f1=overlap,
        specificity=_ratio(c.tn, c.tn + c.fp),
        dice=overlap,
    )


def f1_from_pr(p: float, r: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if not (0.0 <= p <= 1.0 and 0.0 <= r <= 1.0):
        raise InvalidInputError(f"precision/recall must lie in [0, 1], got {p}, {r}")
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def threshold_sweep(probs, truth, thresholds) -> list[SweepEntry]:
    """One confusion/metric row per threshold; thresholds strictly increasing."""
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise InvalidInputError("threshold list must be non-empty")
    if any(t2 <= t1 for t1, t2 in zip(thresholds, thresholds[1:])):
        raise InvalidInputError("thresholds must be strictly increasing")
    entries = []
    for t in thresholds:
        counts = confusion(probs, truth, t)
        entries.append(SweepEntry(threshold=t, counts=counts, metrics=metric_set(counts)))
    return entries


def roc_auc(probs, truth) -> RocCurve:
    """Exact ROC over grouped unique scores, with the trapezoidal area.

    The area equals the probability that a random positive voxel outscores a
    random negative one, counting ties as one half.
    """
    scores = _scores_of(probs)
    labels = _labels_of(truth)
    if scores.shape != labels.shape:
        raise ShapeError(f"probs ({scores.size}) and truth ({labels.size}) sizes differ")
    pos = int(np.count_nonzero(labels))
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("AUC is undefined when truth has a single class")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    lab = labels[order]
    # group ties: indices of the last element of each unique-score run
    last_in_group = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    cum_tp = np.cumsum(lab)[last_in_group]
    cum_fp = (last_in_group + 1) - cum_tp
    tpr = np.concatenate([[0.0], cum_tp / pos])
    fpr = np.concatenate([[0.0], cum_fp / neg])
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1])) / 2.0)
    return RocCurve(points=np.column_stack([fpr, tpr]), auc=auc)


def dice_coefficient(pred: MaskVolume, truth: MaskVolume) -> float:
    """Overlap 2|P∩T| / (|P|+|T|); two empty masks count as a perfect 1.0."""
    if pred.shape != truth.shape:
        raise ShapeError(f"mask shapes differ: {tuple(pred.shape)} vs {tuple(truth.shape)}")
    p = pred.data > 0
    t = truth.data > 0
    denom = int(np.count_nonzero(p)) + int(np.count_nonzero(t))
    if denom == 0:
        return 1.0
    inter = int(np.count_nonzero(p & t))
    return 2 * inter / denom


def dice_per_sample(pred_masks: list[MaskVolume], truth_masks: list[MaskVolume]) -> DiceSummary:
    """Per-sample Dice plus box-plot statistics.

    Quartiles use linear interpolation; whiskers reach to the most extreme
    scores within 1.5 IQR of the box, everything beyond is an outlier.
    """
    if len(pred_masks) != len(truth_masks):
        raise InvalidInputError(
            f"got {len(pred_masks)} predictions but {len(truth_masks)} truths"
        )
    if not pred_masks:
        raise InvalidInputError("need at least one mask pair")
    dices = np.array([dice_coefficient(p, t) for p, t in zip(pred_masks, truth_masks)])
    q1, median, q3 = (float(q) for q in np.percentile(dices, [25, 50, 75]))
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = dices[(dices >= lo_fence) & (dices <= hi_fence)]
    outliers = dices[(dices < lo_fence) | (dices > hi_fence)]
    return DiceSummary(
        dice=tuple(float(d) for d in dices),
        median=median,
        q1=q1,
        q3=q3,
        whisker_lo=float(inside.min()),
        whisker_hi=float(inside.max()),
        outliers=tuple(float(d) for d in outliers),
    )
