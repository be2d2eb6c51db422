"""Evaluation metrics against hand values, published numbers, and oracles."""

import numpy as np
import pytest

from batseg.errors import InvalidInputError, ShapeError, UndefinedMetricError
from batseg.metrics import (
    ConfusionCounts,
    confusion,
    dice_coefficient,
    dice_per_sample,
    f1_from_pr,
    metric_set,
    roc_auc,
    threshold_sweep,
)
from batseg.volume import MaskVolume, Shape3, Volume

# confusion-matrix counts reported for the reference model
REPORTED_COUNTS = ConfusionCounts(tp=99_344, tn=3_100_000, fp=42_526, fn=20_000)


# --- independent oracles ------------------------------------------------------

def confusion_oracle(scores, labels, threshold):
    tp = tn = fp = fn = 0
    for s, t in zip(scores.ravel(), labels.ravel()):
        if s >= threshold:
            if t:
                tp += 1
            else:
                fp += 1
        else:
            if t:
                fn += 1
            else:
                tn += 1
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def mann_whitney_auc(scores, labels):
    """Brute force over all positive/negative pairs, ties count one half."""
    pos = scores[labels > 0]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


class TestConfusion:
    def test_simple_tally(self):
        probs = Volume(Shape3(1, 1, 2), 1, np.array([0.9, 0.2]))
        truth = MaskVolume(Shape3(1, 1, 2), np.array([[[1, 0]]]))
        c = confusion(probs, truth, 0.5)
        assert (c.tp, c.tn, c.fp, c.fn) == (1, 1, 0, 0)

    def test_threshold_zero_has_no_false_negatives(self):
        rng = np.random.default_rng(1)
        scores = rng.random(500)
        labels = rng.random(500) < 0.3
        assert confusion(scores, labels, 0.0).fn == 0

    def test_matches_per_voxel_loop_oracle(self):
        rng = np.random.default_rng(2)
        scores = rng.random((10, 10, 10))
        labels = rng.random((10, 10, 10)) < 0.2
        for t in (0.0, 0.3, 0.77, 1.0):
            assert confusion(scores, labels, t) == confusion_oracle(scores, labels, t)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            confusion(np.zeros(3), np.zeros(4), 0.5)


class TestMetricSet:
    def test_reported_sensitivity_and_specificity(self):
        m = metric_set(REPORTED_COUNTS)
        assert m.recall == pytest.approx(0.8324, abs=5e-5)
        assert m.specificity == pytest.approx(0.9865, abs=5e-5)

    def test_hand_derived_accuracy_precision_dice(self):
        m = metric_set(REPORTED_COUNTS)
        assert m.accuracy == pytest.approx(0.980831, abs=1e-6)
        assert m.precision == pytest.approx(0.700247, abs=1e-6)
        assert m.dice == pytest.approx(0.760633, abs=1e-6)
        assert m.f1 == m.dice

    def test_perfect_prediction_all_ones(self):
        m = metric_set(ConfusionCounts(tp=50, tn=0, fp=0, fn=0))
        assert (m.accuracy, m.precision, m.recall, m.f1, m.dice) == (1.0,) * 5

    def test_zero_denominators_report_zero(self):
        m = metric_set(ConfusionCounts(tp=0, tn=10, fp=0, fn=0))
        assert m.precision == 0.0 and m.recall == 0.0 and m.f1 == 0.0

    def test_all_zero_counts_rejected(self):
        with pytest.raises(InvalidInputError):
            metric_set(ConfusionCounts(tp=0, tn=0, fp=0, fn=0))

    def test_accuracy_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            tp, tn, fp, fn = (int(v) for v in rng.integers(0, 100, 4))
            if tp + tn + fp + fn == 0:
                continue
            m = metric_set(ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn))
            assert m.accuracy == (tp + tn) / (tp + tn + fp + fn)
            for value in (m.accuracy, m.precision, m.recall, m.f1, m.specificity, m.dice):
                assert 0.0 <= value <= 1.0


class TestF1FromPr:
    def test_reported_operating_point(self):
        assert f1_from_pr(0.6323, 0.5303) == pytest.approx(0.5768, abs=1e-4)

    def test_perfect(self):
        assert f1_from_pr(1.0, 1.0) == 1.0

    def test_zero_convention(self):
        assert f1_from_pr(0.0, 0.0) == 0.0
        assert f1_from_pr(0.0, 0.9) == 0.0

    def test_domain_checked(self):
        with pytest.raises(InvalidInputError):
            f1_from_pr(1.2, 0.5)


class TestThresholdSweep:
    def test_above_max_prob_zeroes_precision_recall_f1(self):
        rng = np.random.default_rng(4)
        scores = rng.uniform(0.0, 0.6, 200)
        labels = rng.random(200) < 0.3
        entries = threshold_sweep(scores, labels, [0.1, 0.7])
        m = entries[-1].metrics
        assert m.precision == 0.0 and m.recall == 0.0 and m.f1 == 0.0
        assert entries[-1].counts.tp == 0 and entries[-1].counts.fp == 0

    def test_threshold_zero_captures_all_positives(self):
        rng = np.random.default_rng(5)
        scores = rng.random(100)
        labels = rng.random(100) < 0.5
        entries = threshold_sweep(scores, labels, [0.0])
        assert entries[0].metrics.recall == 1.0
        assert entries[0].counts.fn == 0

    def test_predicted_positives_and_recall_non_increasing(self):
        rng = np.random.default_rng(6)
        grid = [round(0.1 * i, 1) for i in range(1, 10)]
        for _ in range(20):
            scores = rng.random(300)
            labels = rng.random(300) < rng.uniform(0.1, 0.9)
            entries = threshold_sweep(scores, labels, grid)
            pred_pos = [e.counts.tp + e.counts.fp for e in entries]
            recalls = [e.metrics.recall for e in entries]
            assert all(b <= a for a, b in zip(pred_pos, pred_pos[1:]))
            assert all(b <= a for a, b in zip(recalls, recalls[1:]))

    def test_unsorted_thresholds_rejected(self):
        with pytest.raises(InvalidInputError):
            threshold_sweep(np.array([0.5]), np.array([1]), [0.5, 0.3])


class TestRocAuc:
    def test_perfect_separation(self):
        scores = np.array([0.9] * 10 + [0.1] * 10)
        labels = np.array([1] * 10 + [0] * 10)
        assert roc_auc(scores, labels).auc == 1.0

    def test_all_ties_give_half(self):
        scores = np.full(20, 0.5)
        labels = np.array([1, 0] * 10)
        assert roc_auc(scores, labels).auc == 0.5

    def test_endpoints_and_monotonicity(self):
        rng = np.random.default_rng(7)
        scores = rng.random(100)
        labels = rng.random(100) < 0.4
        curve = roc_auc(scores, labels)
        assert tuple(curve.points[0]) == (0.0, 0.0)
        assert tuple(curve.points[-1]) == (1.0, 1.0)
        assert np.all(np.diff(curve.points[:, 0]) >= 0)
        assert np.all(np.diff(curve.points[:, 1]) >= 0)

    def test_matches_pair_oracle_on_random_instances(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n = int(rng.integers(5, 201))
            scores = np.round(rng.random(n), 2)  # rounding forces ties
            labels = rng.random(n) < rng.uniform(0.2, 0.8)
            if labels.all() or not labels.any():
                labels[0] = ~labels[0]
            auc = roc_auc(scores, labels).auc
            assert auc == pytest.approx(mann_whitney_auc(scores, labels), abs=1e-12)

    def test_complement_identity_for_tie_free_scores(self):
        rng = np.random.default_rng(9)
        scores = rng.permutation(np.linspace(0.01, 0.99, 80))
        labels = rng.random(80) < 0.5
        labels[:2] = [True, False]
        a = roc_auc(scores, labels).auc
        b = roc_auc(1.0 - scores, labels).auc
        assert a + b == pytest.approx(1.0, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc(np.array([0.1, 0.9]), np.array([1, 1]))


class TestDice:
    def _mask(self, arr):
        arr = np.asarray(arr, dtype=np.uint8)
        return MaskVolume(Shape3(*arr.shape), arr)

    def test_identical_masks(self):
        rng = np.random.default_rng(10)
        m = self._mask(rng.random((4, 4, 4)) < 0.5)
        assert dice_coefficient(m, m) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((2, 2, 2), dtype=np.uint8)
        b = np.zeros((2, 2, 2), dtype=np.uint8)
        a[0, 0, 0] = 1
        b[1, 1, 1] = 1
        assert dice_coefficient(self._mask(a), self._mask(b)) == 0.0

    def test_both_empty_is_perfect(self):
        z = self._mask(np.zeros((2, 2, 2)))
        assert dice_coefficient(z, z) == 1.0

    def test_dice_equals_f1_exactly_over_random_pairs(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            shape = (4, 4, 4)
            a = rng.random(shape) < rng.uniform(0.1, 0.9)
            b = rng.random(shape) < rng.uniform(0.1, 0.9)
            a.ravel()[0] = True  # keep the pair non-degenerate
            pred, truth = self._mask(a), self._mask(b)
            d = dice_coefficient(pred, truth)
            f1 = metric_set(confusion(a.astype(float), b, 0.5)).f1
            assert d == f1  # exact, same integer arithmetic

    @staticmethod
    def _pair_with_dice(v):
        # |P| = |T| = 100 with overlap k gives dice exactly k/100
        k = int(round(v * 100))
        p = np.zeros(300, dtype=np.uint8)
        t = np.zeros(300, dtype=np.uint8)
        p[:100] = 1
        t[100 - k : 200 - k] = 1
        return (
            MaskVolume(Shape3(3, 10, 10), p.reshape(3, 10, 10)),
            MaskVolume(Shape3(3, 10, 10), t.reshape(3, 10, 10)),
        )

    def test_summary_median_of_three(self):
        pairs = [self._pair_with_dice(v) for v in (0.72, 0.76, 0.79)]
        summary = dice_per_sample([p for p, _ in pairs], [t for _, t in pairs])
        assert summary.dice == pytest.approx((0.72, 0.76, 0.79), abs=1e-12)
        assert summary.median == pytest.approx(0.76, abs=1e-12)

    def test_summary_statistics_and_outliers(self):
        vals = [0.72, 0.74, 0.76, 0.78, 0.79, 0.10]
        pairs = [self._pair_with_dice(v) for v in vals]
        summary = dice_per_sample([p for p, _ in pairs], [t for _, t in pairs])
        assert summary.dice == pytest.approx(tuple(vals), abs=1e-12)
        assert summary.q1 <= summary.median <= summary.q3
        assert summary.median == pytest.approx(np.percentile(vals, 50))
        assert 0.10 in summary.outliers
        assert summary.whisker_lo >= 0.72 - 1e-12

    def test_length_mismatch(self):
        z = self._mask(np.zeros((2, 2, 2)))
        with pytest.raises(InvalidInputError):
            dice_per_sample([z], [z, z])
