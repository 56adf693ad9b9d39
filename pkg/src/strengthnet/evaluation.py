"""Evaluation metrics and report emission."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import Empty, LengthMismatch, OutOfRange, TooShort, ZeroVariance

NORMAL, STRONG = 0, 1
CATEGORIES = ("normal", "strong")
THRESHOLD = 0.5


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1)
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gt)} targets")
    return pred, gt


def mae(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    if len(pred) == 0:
        raise Empty("mae of empty lists")
    return float(np.mean(np.abs(pred - gt)))


def ser_accuracy(pred_probs, gt_labels) -> float:
    """Fraction of argmax hits; ties go to the lowest class index."""
    probs = np.asarray(pred_probs, dtype=np.float64)
    labels = np.asarray(gt_labels).reshape(-1)
    if probs.ndim != 2 or len(probs) != len(labels):
        raise LengthMismatch(f"{len(probs)} predictions vs {len(labels)} labels")
    if len(labels) == 0:
        raise Empty("accuracy of empty lists")
    return float(np.mean(probs.argmax(axis=1) == labels))


def strength_category(scores) -> np.ndarray:
    """0 = normal (< 0.5), 1 = strong (>= 0.5)."""
    return (np.asarray(scores, dtype=np.float64) >= THRESHOLD).astype(int)


def strength_confusion(pred, gt_category) -> np.ndarray:
    """2x2 counts; rows are ground-truth/perceived, columns predicted."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    gt = np.asarray([CATEGORIES.index(c) if isinstance(c, str) else int(c) for c in gt_category])
    if len(pred) == 0:
        raise Empty("confusion of empty lists")
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gt)} categories")
    out = np.zeros((2, 2), dtype=int)
    np.add.at(out, (gt, strength_category(pred)), 1)
    return out


def histogram(pred, bins: int = 20) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    if np.any((pred < 0) | (pred > 1)) or not np.all(np.isfinite(pred)):
        raise OutOfRange("histogram scores must lie in [0, 1]")
    idx = np.minimum((pred * bins).astype(int), bins - 1)
    return np.bincount(idx, minlength=bins)


def spearman(pred, gt) -> float:
    """Pearson correlation of average ranks."""
    pred, gt = _pair(pred, gt)
    if len(pred) < 2:
        raise TooShort("spearman needs at least two points")
    a, b = rankdata(pred), rankdata(gt)
    a -= a.mean()
    b -= b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    if denom == 0:
        raise ZeroVariance("constant input has no rank correlation")
    return float(np.clip((a @ b) / denom, -1.0, 1.0))


@dataclass
class EvalReport:
    mae: float
    ser_accuracy: float | None
    histogram: list
    confusion: list
    confusion_percent: list
    spearman: float | None
    count: int
    per_dataset: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def build_report(pred, gt, pred_probs=None, gt_labels=None, perceived=None, dataset_ids=None,
                 bins: int = 20) -> EvalReport:
    """Assemble every metric.  ``perceived`` defaults to thresholded ``gt``."""
    pred, gt = _pair(pred, gt)
    categories = strength_category(gt) if perceived is None else perceived
    conf = strength_confusion(pred, categories)
    rows = conf.sum(axis=1, keepdims=True)
    percent = np.where(rows > 0, 100.0 * conf / np.maximum(rows, 1), 0.0)
    try:
        rho = spearman(pred, gt)
    except (TooShort, ZeroVariance):
        rho = None
    acc = None if pred_probs is None else ser_accuracy(pred_probs, gt_labels)
    report = EvalReport(mae(pred, gt), acc, histogram(pred, bins).tolist(), conf.tolist(),
                        percent.round(4).tolist(), rho, len(pred))
    if dataset_ids is not None:
        ids = np.asarray(dataset_ids)
        for ds in sorted(set(ids.tolist())):
            sel = ids == ds
            sub = build_report(pred[sel], gt[sel],
                               None if pred_probs is None else np.asarray(pred_probs)[sel],
                               None if gt_labels is None else np.asarray(gt_labels)[sel],
                               None if perceived is None else np.asarray(perceived)[sel], None, bins)
            report.per_dataset[ds] = asdict(sub)
    return report


def histogram_tsv(counts, bins: int | None = None) -> str:
    bins = bins or len(counts)
    lines = ["bin_low\tbin_high\tcount"]
    lines += [f"{k / bins:.4f}\t{(k + 1) / bins:.4f}\t{c}" for k, c in enumerate(counts)]
    return "\n".join(lines) + "\n"


def confusion_tsv(confusion) -> str:
    conf = np.asarray(confusion)
    lines = ["perceived\\predicted\t" + "\t".join(CATEGORIES)]
    lines += [f"{CATEGORIES[i]}\t" + "\t".join(str(v) for v in conf[i]) for i in range(2)]
    return "\n".join(lines) + "\n"
