"""Confusion matrices and the per-class / prevalence-weighted metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..data import LesionClass
from ..errors import UndefinedMetricError, ValidationError

N_CLASSES = len(LesionClass)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """3x3 counts; rows are the true class, columns the predicted class."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.counts)
        if c.shape != (N_CLASSES, N_CLASSES):
            raise ValidationError(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}, got {c.shape}")
        if np.any(c < 0) or not np.all(c == np.round(c)):
            raise ValidationError("confusion matrix counts must be non-negative integers")
        object.__setattr__(self, "counts", c.astype(np.int64))

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_sum(self, c: int) -> int:
        return int(self.counts[c].sum())

    def col_sum(self, c: int) -> int:
        return int(self.counts[:, c].sum())

    def to_dict(self) -> dict:
        return {"labels": [c.display for c in LesionClass], "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfusionMatrix":
        return cls(np.array(d["counts"]))


def confusion_matrix(preds: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ValidationError(f"{len(preds)} predictions for {len(labels)} labels")
    if preds.size and (preds.min() < 0 or preds.max() >= N_CLASSES or labels.min() < 0 or labels.max() >= N_CLASSES):
        raise ValidationError("class indices must be in [0, 3)")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def _ratio(num: int, den: int, what: str) -> float:
    if den == 0:
        raise UndefinedMetricError(f"{what} undefined: zero denominator")
    return num / den


def class_sensitivity(cm: ConfusionMatrix, c: int) -> float:
    return _ratio(int(cm.counts[c, c]), cm.row_sum(c), f"sensitivity of class {c}")


def class_specificity(cm: ConfusionMatrix, c: int) -> float:
    tn = cm.total - cm.row_sum(c) - cm.col_sum(c) + int(cm.counts[c, c])
    return _ratio(tn, cm.total - cm.row_sum(c), f"specificity of class {c}")


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(int(np.trace(cm.counts)), cm.total, "accuracy")


def weighted_aggregate(cm: ConfusionMatrix, metric: Callable[[ConfusionMatrix, int], float]) -> float:
    """Mean of a per-class metric weighted by true-class prevalence."""
    total = cm.total
    if total == 0:
        raise UndefinedMetricError("weighted aggregate of an empty matrix")
    return sum(metric(cm, c) * cm.row_sum(c) / total for c in range(N_CLASSES))


def summarize(cm: ConfusionMatrix) -> dict:
    """All reported metrics for one matrix; undefined entries become None."""

    def safe(fn, *args):
        try:
            return fn(*args)
        except UndefinedMetricError:
            return None

    names = [c.display for c in LesionClass]
    return {
        "confusion": cm.to_dict(),
        "accuracy": safe(accuracy, cm),
        "sensitivity": {n: safe(class_sensitivity, cm, i) for i, n in enumerate(names)},
        "specificity": {n: safe(class_specificity, cm, i) for i, n in enumerate(names)},
        "weighted_sensitivity": safe(weighted_aggregate, cm, class_sensitivity),
        "weighted_specificity": safe(weighted_aggregate, cm, class_specificity),
    }
