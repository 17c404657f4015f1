"""
Classification metrics: top-1 accuracy and macro precision / recall / F1
from a confusion matrix, plus per-factor accuracy for the synthetic task.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from ..constants import NUM_CLASSES
from ..data.synthetic import FACTORS, decompose
from ..errors import ConfigError, ShapeError


@dataclass
class MetricsReport:
    """
    Attributes:
        top1: correct / total
        mean_precision: Macro-averaged precision
        mean_recall: Macro-averaged recall
        mean_f1: Macro-averaged F1
        confusion: [N_cls, N_cls] counts, rows = ground truth, columns = prediction
        precision: Per-class precision
        recall: Per-class recall
        f1: Per-class F1
    """

    top1: float
    mean_precision: float
    mean_recall: float
    mean_f1: float
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def summary(self) -> Dict[str, float]:
        """The four headline numbers keyed by their history-CSV column names."""
        return {
            "top1": self.top1,
            "meanP": self.mean_precision,
            "meanR": self.mean_recall,
            "meanF1": self.mean_f1,
        }


def confusion_matrix(predictions: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Counts [N_cls, N_cls] with rows indexed by label and columns by prediction."""
    flat = labels.astype(np.int64) * num_classes + predictions.astype(np.int64)
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes
    )


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # zero denominators count as 0
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _check(predictions, labels, num_classes: int):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ShapeError(
            f"predictions {predictions.shape} and labels {labels.shape} must be equal-length lists"
        )
    if labels.size == 0:
        raise ConfigError("cannot compute metrics on an empty set")
    for arr, what in ((predictions, "prediction"), (labels, "label")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ConfigError(f"{what} outside [0, {num_classes})")
    return predictions, labels


def compute_metrics(predictions, labels, num_classes: int) -> MetricsReport:
    """
    Top-1 and macro P/R/F1.

    Classes whose precision or recall has a zero denominator count as 0 in
    the mean, as does F1 when P + R = 0.

    Args:
        predictions: [n] predicted class ids
        labels: [n] true class ids
        num_classes: N_cls

    Raises:
        ConfigError: Empty input or ids out of range
        ShapeError: Unequal lengths
    """
    predictions, labels = _check(predictions, labels, num_classes)
    cm = confusion_matrix(predictions, labels, num_classes)
    tp = np.diag(cm).astype(np.float64)
    precision = _ratio(tp, cm.sum(axis=0))
    recall = _ratio(tp, cm.sum(axis=1))
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    return MetricsReport(
        top1=float(tp.sum() / cm.sum()),
        mean_precision=float(precision.mean()),
        mean_recall=float(recall.mean()),
        mean_f1=float(f1.mean()),
        confusion=cm,
        precision=precision,
        recall=recall,
        f1=f1,
    )


def factor_accuracy(predictions, labels) -> Dict[str, float]:
    """
    Accuracy of each synthetic factor (hue, stripe, checker) read off the
    predicted class ids.
    """
    predictions, labels = _check(predictions, labels, NUM_CLASSES)
    pred_factors = decompose(predictions)
    true_factors = decompose(labels)
    return {
        name: float(np.mean(p == t)) for name, p, t in zip(FACTORS, pred_factors, true_factors)
    }
