"""Learning-curve points and saturation detection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ValidationError
from .metrics import ConfusionMatrix

DEFAULT_EPSILON = 0.005


@dataclass(frozen=True)
class CurvePoint:
    """Cross-validated accuracy at one training-set size.

    ``train_size_per_fold`` is the schedule entry; ``train_sizes`` holds the
    actual training-pool size of each split.
    """

    train_size_per_fold: int
    fold_accuracies: tuple[float, ...]
    train_sizes: tuple[int, ...] = ()
    confusion: ConfusionMatrix | None = field(default=None, compare=False)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))


def _accuracies(curve: Sequence[CurvePoint | float]) -> list[float]:
    return [p.mean_accuracy if isinstance(p, CurvePoint) else float(p) for p in curve]


def find_saturation(curve: Sequence[CurvePoint | float], epsilon: float = DEFAULT_EPSILON) -> int:
    """0-based index of the first point no later point beats by more than ``epsilon``."""
    acc = _accuracies(curve)
    if len(acc) < 2:
        raise ValidationError("saturation needs at least 2 curve points")
    best_after = -np.inf
    answer = len(acc) - 1
    # Scan backwards keeping the best accuracy seen to the right.
    for i in range(len(acc) - 1, -1, -1):
        if acc[i] + epsilon >= best_after:
            answer = i
        best_after = max(best_after, acc[i])
    return answer
