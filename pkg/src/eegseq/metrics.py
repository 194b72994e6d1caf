"""Confusion matrices, threshold metrics, ROC/AUC and multi-seed aggregation.

The positive class is label 1.  A window is predicted positive when its
positive-class score is strictly greater than the threshold (0.5), so a
score of exactly 0.5 predicts negative.  Metrics whose denominator is zero
are reported as 0.0 and their name is added to ``MetricSet.undefined``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ContractError, MetricError

METRIC_NAMES = ("precision", "accuracy", "f1", "recall", "specificity", "auc")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass
class MetricSet:
    precision: float
    accuracy: float
    f1: float
    recall: float
    specificity: float
    auc: float | None = None
    undefined: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES if getattr(self, name) is not None}


def confusion_from_scores(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.size == 0:
        raise ContractError(f"need equally sized, nonempty scores and labels, got {scores.shape} and {labels.shape}")
    pred = scores > threshold
    pos = labels == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(num: int, den: int, name: str, undefined: list[str]) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def metrics(cm: ConfusionMatrix) -> MetricSet:
    """Threshold metrics (everything but AUC) from a confusion matrix."""
    if cm.total <= 0:
        raise ContractError("confusion matrix is empty")
    undefined: list[str] = []
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", undefined)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall", undefined)
    specificity = _ratio(cm.tn, cm.tn + cm.fp, "specificity", undefined)
    accuracy = (cm.tp + cm.tn) / cm.total
    # F1 from counts: 2TP / (2TP + FP + FN), identical to the harmonic mean
    f1 = _ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn, "f1", undefined)
    return MetricSet(precision, accuracy, f1, recall, specificity, None, undefined)


def _check_binary(labels: np.ndarray) -> tuple[int, int]:
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos + n_neg != labels.size:
        raise MetricError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positive and negative examples")
    return n_pos, n_neg


def roc_curve(scores, labels) -> list[tuple[float, float, float]]:
    """ROC points (fpr, tpr, threshold) from the strictest threshold down.

    Tied scores form a single point.  The first point is (0, 0, +inf).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos, n_neg = _check_binary(labels)
    points = [(0.0, 0.0, math.inf)]
    for thr, tp, fp in _roc_counts(scores, labels):
        points.append((fp / n_neg, tp / n_pos, thr))
    return points


def _roc_counts(scores: np.ndarray, labels: np.ndarray) -> list[tuple[float, int, int]]:
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    out = []
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            tp += int(y[j] == 1)
            fp += int(y[j] == 0)
            j += 1
        out.append((float(s[i]), tp, fp))
        i = j
    return out


def auc_fraction(scores, labels) -> Fraction:
    """Trapezoidal ROC area as an exact rational."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos, n_neg = _check_binary(labels)
    twice_area = 0
    prev_tp = prev_fp = 0
    for _, tp, fp in _roc_counts(scores, labels):
        twice_area += (fp - prev_fp) * (tp + prev_tp)
        prev_tp, prev_fp = tp, fp
    return Fraction(twice_area, 2 * n_pos * n_neg)


def auc(scores, labels) -> float:
    """Area under the ROC curve; ties between a positive and a negative count half."""
    frac = auc_fraction(scores, labels)
    return frac.numerator / frac.denominator


@dataclass
class Aggregate:
    mean: dict[str, float]
    std: dict[str, float]
    n: int
    std_undefined: bool = False


def aggregate(reports: list[MetricSet]) -> Aggregate:
    """Mean and sample (n-1) standard deviation of each metric over runs."""
    if not reports:
        raise ContractError("aggregate needs at least one report")
    names = [m for m in METRIC_NAMES if all(getattr(r, m) is not None for r in reports)]
    n = len(reports)
    mean, std = {}, {}
    for m in names:
        values = np.array([getattr(r, m) for r in reports], dtype=np.float64)
        mean[m] = float(values.mean())
        std[m] = float(values.std(ddof=1)) if n > 1 else 0.0
    return Aggregate(mean, std, n, std_undefined=n == 1)


def format_percent(mean: float, std: float) -> str:
    """``97.22% ± 0.007``: percent-scale mean, fraction-scale std."""
    return f"{100 * mean:.2f}% ± {std:.3f}"
