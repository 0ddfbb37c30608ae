"""Patient-level, class-balanced cross-validation folds."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..data import Dataset, LesionClass, LesionROI
from ..errors import ValidationError
from ..seeding import derive_seed


@dataclass(frozen=True)
class FoldSplit:
    """Assignment of every patient to one of ``k`` folds."""

    assignment: dict[str, int]
    k: int

    def fold_of(self, item: LesionROI) -> int:
        try:
            return self.assignment[item.patient_id]
        except KeyError:
            raise ValidationError(f"patient {item.patient_id!r} is not in this split") from None

    def fold_items(self, dataset: Dataset, fold: int) -> Dataset:
        return Dataset(tuple(i for i in dataset if self.fold_of(i) == fold), f"{dataset.name}-fold{fold}")

    def folds(self, dataset: Dataset) -> list[Dataset]:
        return [self.fold_items(dataset, f) for f in range(self.k)]

    def class_counts(self, dataset: Dataset) -> np.ndarray:
        """``(k, n_classes)`` lesion counts."""
        out = np.zeros((self.k, len(LesionClass)), dtype=int)
        for item in dataset:
            out[self.fold_of(item), int(item.label)] += 1
        return out


def make_folds(dataset: Dataset, k: int = 3, seed: int = 0) -> FoldSplit:
    """Split patients into ``k`` folds with near-equal class counts.

    Patients are visited largest first (ties in seeded random order) and
    each goes to the fold where its classes are currently rarest, so a
    dataset of single-lesion patients gets per-class counts within one of
    each other.
    """
    if k < 2:
        raise ValidationError("need at least 2 folds")
    per_patient: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(len(LesionClass), dtype=int))
    for item in dataset:
        per_patient[item.patient_id][int(item.label)] += 1
    for c in LesionClass:
        n = sum(1 for v in per_patient.values() if v[int(c)] > 0)
        if 0 < n < k:
            raise ValidationError(f"class {c.display} has {n} patients, fewer than k={k} folds")
    if len(per_patient) < k:
        raise ValidationError(f"{len(per_patient)} patients cannot fill k={k} folds")

    patients = sorted(per_patient)
    rng = np.random.default_rng(derive_seed(seed, "folds"))
    patients = [patients[i] for i in rng.permutation(len(patients))]
    patients.sort(key=lambda p: -int(per_patient[p].sum()))

    counts = np.zeros((k, len(LesionClass)), dtype=int)
    assignment: dict[str, int] = {}
    for p in patients:
        v = per_patient[p]
        cost = [(int(counts[f] @ v), int(counts[f].sum()), f) for f in range(k)]
        f = min(cost)[2]
        counts[f] += v
        assignment[p] = f
    return FoldSplit(assignment, k)
