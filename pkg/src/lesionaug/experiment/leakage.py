"""Guard against test-fold information entering any training pool."""

from __future__ import annotations

from typing import Iterable

from ..data import LesionROI, Provenance
from ..errors import LeakageError


class LeakageGuard:
    """Knows one test fold and rejects any training item derived from it.

    An item leaks if its own id or any id in its lineage belongs to the test
    fold, or if a non-synthetic item comes from a test-fold patient.
    """

    def __init__(self, test_items: Iterable[LesionROI]):
        items = list(test_items)
        self.test_ids = frozenset(i.lesion_id for i in items)
        self.test_patients = frozenset(i.patient_id for i in items)
        self.checks = 0

    def check(self, train_items: Iterable[LesionROI], pool: str) -> None:
        for item in train_items:
            hit = (item.lineage | {item.lesion_id}) & self.test_ids
            if hit:
                raise LeakageError(f"{pool}: item {item.lesion_id!r} derives from test lesion {sorted(hit)[0]!r}")
            if item.provenance is not Provenance.SYNTHETIC and item.patient_id in self.test_patients:
                raise LeakageError(f"{pool}: item {item.lesion_id!r} belongs to test patient {item.patient_id!r}")
        self.checks += 1

    def check_lineage(self, lineage: Iterable[str], what: str) -> None:
        hit = frozenset(lineage) & self.test_ids
        if hit:
            raise LeakageError(f"{what} was trained on test lesion {sorted(hit)[0]!r}")
        self.checks += 1
