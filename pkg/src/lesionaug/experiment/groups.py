"""Nested training groups built from classic and synthetic augmentation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..augment import AugmentationPlan, AugmentedSample, TransformRecord, draw_transforms, plan_size, render, to_roi
from ..data import Dataset, LesionClass, LesionROI, require_real
from ..dcgan import TrainedGenerator, synthesize
from ..errors import ValidationError
from ..seeding import derive_seed

CLASSIC_SCHEDULE = (63, 250, 500, 1000, 2500, 5000, 10000, 20000, 30000)
SYNTH_SCHEDULE = (500, 1000, 3000, 5000, 8000, 12000)


def _increasing(values: Sequence[int], what: str) -> tuple[int, ...]:
    out = tuple(int(v) for v in values)
    if not out or min(out) < 1:
        raise ValidationError(f"{what} schedule must hold positive sizes")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ValidationError(f"{what} schedule must be strictly increasing, got {list(out)}")
    return out


@dataclass(frozen=True)
class DataGroupSchedule:
    """Per-fold group sizes.

    ``classic[0]`` always stands for the unaugmented originals, whatever
    their exact count. ``synthetic`` entries are add-on counts stacked on
    the optimal classic group.
    """

    classic: tuple[int, ...] = CLASSIC_SCHEDULE
    synthetic: tuple[int, ...] = SYNTH_SCHEDULE

    def __post_init__(self) -> None:
        object.__setattr__(self, "classic", _increasing(self.classic, "classic"))
        object.__setattr__(self, "synthetic", _increasing(self.synthetic, "synthetic") if self.synthetic else ())


class RenderCache:
    """Memoised augmentation rendering keyed by (lesion_id, aug_index).

    Records are drawn for a lesion once; pixels are rendered only for the
    samples some group actually uses.
    """

    def __init__(self, plan: AugmentationPlan, seed: int):
        self.plan = plan
        self.seed = seed
        self._records: dict[str, list[TransformRecord]] = {}
        self._rois: dict[tuple[str, int], LesionROI] = {}

    def records(self, roi: LesionROI) -> list[TransformRecord]:
        if roi.lesion_id not in self._records:
            self._records[roi.lesion_id] = draw_transforms(roi, self.plan, self.seed)
        return self._records[roi.lesion_id]

    def get(self, roi: LesionROI, index: int) -> LesionROI:
        key = (roi.lesion_id, index)
        if key not in self._rois:
            rec = self.records(roi)[index]
            self._rois[key] = to_roi(roi, AugmentedSample(render(roi, rec), roi.lesion_id, rec))
        return self._rois[key]


def per_lesion_counts(n_lesions: int, extra: int, rank: np.ndarray) -> np.ndarray:
    """Split ``extra`` samples over lesions; lesion ranks break the remainder.

    Each count is ``floor((extra + n - 1 - rank) / n)``, which is
    non-decreasing in ``extra``, so groups built from growing totals nest.
    """
    return (extra + n_lesions - 1 - rank) // n_lesions


def build_nested_groups(
    train_lesions: Dataset | Sequence[LesionROI],
    plan: AugmentationPlan,
    schedule: Sequence[int],
    seed: int,
    cache: RenderCache | None = None,
) -> list[Dataset]:
    """Nested groups of originals plus classic augmentations.

    The first group holds only the originals. Group ``i`` holds ``schedule[i]``
    samples: the originals plus ``schedule[i] - n`` augmentations shared out
    so per-lesion counts differ by at most one. Each lesion uses a seeded
    permutation of its augmentation pool and takes a prefix of it.
    """
    lesions = list(train_lesions)
    require_real(lesions, "augmentation source")
    sizes = _increasing(schedule, "classic")
    if not lesions:
        raise ValidationError("no lesions to augment")
    n = len(lesions)
    pool = plan_size(plan)
    for size in sizes[1:]:
        if size < n:
            raise ValidationError(f"group size {size} is smaller than the {n} originals")
        if size - n > n * pool:
            raise ValidationError(f"group size {size} exceeds the augmentation pool ({n} lesions x {pool} + originals)")
    cache = cache or RenderCache(plan, seed)
    ids = sorted(r.lesion_id for r in lesions)
    perm = np.random.default_rng(derive_seed(seed, "group-rank", *ids)).permutation(n)
    rank = np.empty(n, dtype=int)
    rank[perm] = np.arange(n)
    by_id = {r.lesion_id: r for r in lesions}
    ordered = [by_id[i] for i in ids]
    orders = {
        r.lesion_id: np.random.default_rng(derive_seed(seed, "group-order", r.lesion_id)).permutation(pool)
        for r in ordered
    }
    groups = [Dataset(tuple(ordered), "group1")]
    for gi, size in enumerate(sizes[1:], start=2):
        counts = per_lesion_counts(n, size - n, rank)
        items = list(ordered)
        for roi, count in zip(ordered, counts):
            items.extend(cache.get(roi, int(j)) for j in orders[roi.lesion_id][:count])
        groups.append(Dataset(tuple(items), f"group{gi}"))
    return groups


def build_synth_groups(
    generators: Mapping[LesionClass, TrainedGenerator],
    schedule: Sequence[int],
    seed: int,
) -> list[Dataset]:
    """Class-balanced nested synthetic groups.

    Each size is split equally over the three classes, rounding down to a
    multiple of three so the balance stays exact.
    """
    sizes = _increasing(schedule, "synthetic")
    missing = [c.display for c in LesionClass if c not in generators]
    if missing:
        raise ValidationError(f"missing class generator(s): {missing}")
    for c, g in generators.items():
        if g.label is not LesionClass(c):
            raise ValidationError(f"generator for {LesionClass(c).display} produces {g.label.display}")
    per_class = [s // len(LesionClass) for s in sizes]
    if per_class[0] < 1:
        raise ValidationError("synthetic group smaller than one sample per class")
    drawn = {
        c: synthesize(generators[c], per_class[-1], derive_seed(seed, "synth", c.name)) for c in LesionClass
    }
    return [
        Dataset(tuple(x for c in LesionClass for x in drawn[c][:m]), f"synth{gi}")
        for gi, m in enumerate(per_class, start=1)
    ]
