"""Report emission: CSV tables, PGM heatmap slices, and the summary row.

CSV schemas (documented here, asserted by tests):

* curves:  ``epoch,train_loss,train_acc,val_loss,val_acc``
* sweep:   ``threshold,tp,tn,fp,fn,accuracy,precision,recall,f1,specificity``
* roc:     ``fpr,tpr``
* dice:    ``sample_id,dice``
* report:  ``accuracy,precision,recall,f1,auc,sensitivity,specificity``

Floats are written with repr (shortest round-trip), so every emitted number
is recomputable from the run log and byte-stable across replays.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .fsio import atomic_write_text
from .metrics import ConfusionCounts, DiceSummary, MetricSet, RocCurve, SweepEntry, metric_set
from .training import EpochLog

CURVES_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"
SWEEP_HEADER = "threshold,tp,tn,fp,fn,accuracy,precision,recall,f1,specificity"
ROC_HEADER = "fpr,tpr"
DICE_HEADER = "sample_id,dice"
REPORT_HEADER = "accuracy,precision,recall,f1,auc,sensitivity,specificity"


def _f(x: float) -> str:
    return repr(float(x))


def write_curves_csv(path: str | Path, logs: list[EpochLog]) -> None:
    lines = [CURVES_HEADER]
    for log in logs:
        lines.append(
            f"{log.epoch},{_f(log.train_loss)},{_f(log.train_acc)},"
            f"{_f(log.val_loss)},{_f(log.val_acc)}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_sweep_csv(path: str | Path, entries: list[SweepEntry]) -> None:
    lines = [SWEEP_HEADER]
    for e in entries:
        c, m = e.counts, e.metrics
        lines.append(
            f"{_f(e.threshold)},{c.tp},{c.tn},{c.fp},{c.fn},"
            f"{_f(m.accuracy)},{_f(m.precision)},{_f(m.recall)},{_f(m.f1)},{_f(m.specificity)}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_roc_csv(path: str | Path, curve: RocCurve) -> None:
    lines = [ROC_HEADER]
    for fpr, tpr in curve.points:
        lines.append(f"{_f(fpr)},{_f(tpr)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_dice_csv(path: str | Path, sample_ids: list[str], dices) -> None:
    lines = [DICE_HEADER]
    for sid, d in zip(sample_ids, dices):
        lines.append(f"{sid},{_f(d)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def dice_summary_dict(summary: DiceSummary) -> dict:
    return {
        "median": summary.median,
        "q1": summary.q1,
        "q3": summary.q3,
        "whisker_lo": summary.whisker_lo,
        "whisker_hi": summary.whisker_hi,
        "outliers": list(summary.outliers),
        "mean": float(np.mean(summary.dice)),
        "n": len(summary.dice),
    }


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Plain (ASCII, P2) portable graymap of a 2D array scaled from [0,1] to 0..255."""
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2D array, got {image.ndim} dims")
    levels = np.clip(np.rint(np.clip(image, 0.0, 1.0) * 255.0), 0, 255).astype(int)
    h, w = levels.shape
    lines = ["P2", f"{w} {h}", "255"]
    for row in levels:
        tokens = [str(v) for v in row]
        # keep lines inside the 70-character limit of the plain format
        line = ""
        for tok in tokens:
            if line and len(line) + 1 + len(tok) > 68:
                lines.append(line)
                line = tok
            else:
                line = f"{line} {tok}" if line else tok
        lines.append(line)
    atomic_write_text(path, "\n".join(lines) + "\n")


def summary_row(counts: ConfusionCounts, auc: float) -> tuple[MetricSet, str]:
    """Table-style one-row summary; returns the metric set and the CSV body row."""
    m = metric_set(counts)
    row = (
        f"{_f(m.accuracy)},{_f(m.precision)},{_f(m.recall)},{_f(m.f1)},"
        f"{_f(auc)},{_f(m.recall)},{_f(m.specificity)}"
    )
    return m, row


def format_report_text(m: MetricSet, auc: float) -> str:
    pct = lambda x: f"{100.0 * x:6.2f}%"
    return "\n".join(
        [
            "model performance summary",
            "-" * 41,
            f"accuracy     {pct(m.accuracy)}",
            f"precision    {m.precision:8.4f}",
            f"recall       {m.recall:8.4f}",
            f"f1           {m.f1:8.4f}",
            f"auc          {auc:8.4f}",
            f"sensitivity  {pct(m.recall)}",
            f"specificity  {pct(m.specificity)}",
        ]
    )
