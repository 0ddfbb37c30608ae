from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionaug.augment import AugmentationPlan
from lesionaug.data import Dataset, LesionClass, LesionROI, Provenance
from lesionaug.dcgan import GanTrainConfig, TrainedGenerator, build_generator
from lesionaug.errors import LeakageError, ValidationError
from lesionaug.experiment.folds import make_folds
from lesionaug.experiment.groups import DataGroupSchedule, RenderCache, build_nested_groups, build_synth_groups
from lesionaug.experiment.leakage import LeakageGuard

SMALL_PLAN = AugmentationPlan(2, 1, 1, 1)  # 8 records per lesion


def lesion(i, label=0, patient=None):
    return LesionROI(
        pixels=np.full((64, 64), 0.5), diameter_px=20.0, label=label,
        patient_id=patient or f"p{i}", lesion_id=f"l{i}",
    )


def singles(counts):
    items, i = [], 0
    for label, n in enumerate(counts):
        for _ in range(n):
            items.append(lesion(i, label))
            i += 1
    return Dataset(tuple(items))


# -- folds ------------------------------------------------------------------------


def test_standard_folds(standard_phantom):
    split = make_folds(standard_phantom, 3, seed=0)
    sizes = [len(f) for f in split.folds(standard_phantom)]
    assert sum(sizes) == 182 and max(sizes) - min(sizes) <= 2
    counts = split.class_counts(standard_phantom)
    assert (counts.max(axis=0) - counts.min(axis=0)).max() <= 2


def test_single_lesion_patients_balance_exactly():
    ds = singles((53, 64, 65))
    counts = make_folds(ds, 3, seed=4).class_counts(ds)
    assert (counts.max(axis=0) - counts.min(axis=0)).max() <= 1
    assert counts.sum(axis=0).tolist() == [53, 64, 65]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_patients_in_exactly_one_fold(seed):
    ds = _phantom_ids(seed % 5)
    split = make_folds(ds, 3, seed)
    folds = split.folds(ds)
    patients = [{i.patient_id for i in f} for f in folds]
    assert sum(len(p) for p in patients) == len(set().union(*patients))
    assert sum(len(f) for f in folds) == len(ds)


_cache = {}


def _phantom_ids(seed):
    from lesionaug.phantom import PhantomConfig, generate_phantom_dataset

    if seed not in _cache:
        _cache[seed] = generate_phantom_dataset(PhantomConfig(n_per_class=(9, 10, 11), diameter_range=(10, 20), seed=seed))
    return _cache[seed]


def test_fold_seed_determinism():
    ds = singles((10, 10, 10))
    assert make_folds(ds, 3, 7).assignment == make_folds(ds, 3, 7).assignment


def test_too_few_patients():
    with pytest.raises(ValidationError):
        make_folds(singles((1, 1, 0)), 3)
    with pytest.raises(ValidationError):
        make_folds(singles((2, 5, 5)), 3)
    with pytest.raises(ValidationError):
        make_folds(singles((5, 5, 5)), 1)


# -- nested classic groups -----------------------------------------------------------


def _ids(ds):
    return {(i.lesion_id, i.aug_index) for i in ds}


def test_nested_groups_structure():
    lesions = singles((3, 3, 3)).items
    groups = build_nested_groups(lesions, SMALL_PLAN, (9, 20, 40, 81), seed=1)
    assert [len(g) for g in groups] == [9, 20, 40, 81]
    assert all(i.provenance is Provenance.REAL for i in groups[0])
    for a, b in zip(groups, groups[1:]):
        assert _ids(a) <= _ids(b)
    for g in groups[1:]:
        per = Counter(i.origin for i in g if i.provenance is Provenance.CLASSIC_AUG)
        counts = [per.get(f"l{k}", 0) for k in range(9)]
        assert max(counts) - min(counts) <= 1


def test_first_group_is_originals_whatever_the_entry():
    groups = build_nested_groups(singles((2, 2, 2)).items, SMALL_PLAN, (5, 50), seed=0)
    assert len(groups[0]) == 6


def test_group_exceeding_pool():
    with pytest.raises(ValidationError):
        build_nested_groups(singles((1, 1, 1)).items, SMALL_PLAN, (3, 3 + 3 * 8 + 1), seed=0)


def test_group_rejects_augmented_sources():
    aug = LesionROI(pixels=np.zeros((8, 8)), diameter_px=4.0, label=0, patient_id="p", lesion_id="a#1",
                    provenance=Provenance.CLASSIC_AUG, origin="a")
    with pytest.raises(ValidationError):
        build_nested_groups([aug], SMALL_PLAN, (1, 2), seed=0)


def test_groups_deterministic_and_cache_shared(small_phantom):
    lesions = small_phantom.items[:6]
    cache = RenderCache(SMALL_PLAN, 3)
    a = build_nested_groups(lesions, SMALL_PLAN, (6, 20, 40), 3, cache)
    b = build_nested_groups(lesions, SMALL_PLAN, (6, 20, 40), 3)
    for x, y in zip(a[-1], b[-1]):
        assert x.lesion_id == y.lesion_id
        np.testing.assert_array_equal(x.pixels, y.pixels)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.lists(st.integers(0, 96), min_size=1, max_size=5, unique=True), st.integers(0, 1000))
def test_nesting_and_balance_property(n, extras, seed):
    lesions = [lesion(i, i % 3) for i in range(n)]
    sizes = [n] + sorted(n + min(e, n * 8) for e in extras)
    sizes = sorted(set(sizes))
    if len(sizes) < 2:
        return
    groups = build_nested_groups(lesions, SMALL_PLAN, sizes, seed, RenderCache(SMALL_PLAN, seed))
    for a, b in zip(groups, groups[1:]):
        assert _ids(a) <= _ids(b)
    for g, size in zip(groups, sizes):
        assert len(g) == size
        per = Counter(i.origin for i in g if i.provenance is Provenance.CLASSIC_AUG)
        counts = [per.get(f"l{k}", 0) for k in range(n)]
        assert max(counts) - min(counts) <= 1


def test_schedule_must_increase():
    with pytest.raises(ValidationError):
        DataGroupSchedule((63, 63, 100))


# -- synthetic groups ----------------------------------------------------------------


@pytest.fixture(scope="module")
def generators():
    cfg = GanTrainConfig(width=64, seed=2)
    out = {}
    for c in LesionClass:
        net = build_generator(cfg.architecture, np.random.default_rng(int(c)))
        out[c] = TrainedGenerator(net, c, cfg, f"g-{c.name}", frozenset({f"src-{c.name}"}))
    return out


def test_synth_groups_balanced_and_nested(generators):
    groups = build_synth_groups(generators, (30, 60, 3000), seed=5)
    assert [len(g) for g in groups] == [30, 60, 3000]
    assert [g.class_counts()[LesionClass.CYST] for g in groups] == [10, 20, 1000]
    for g in groups:
        assert len(set(g.class_counts().values())) == 1
        assert all(i.provenance is Provenance.SYNTHETIC for i in g)
    for a, b in zip(groups, groups[1:]):
        assert {i.lesion_id for i in a} <= {i.lesion_id for i in b}


def test_synth_groups_deterministic(generators):
    a = build_synth_groups(generators, (9, 12), seed=1)
    b = build_synth_groups(generators, (9, 12), seed=1)
    for x, y in zip(a[-1], b[-1]):
        np.testing.assert_array_equal(x.pixels, y.pixels)


def test_synth_groups_missing_generator(generators):
    partial = {c: g for c, g in generators.items() if c is not LesionClass.HEMANGIOMA}
    with pytest.raises(ValidationError):
        build_synth_groups(partial, (9,), seed=0)
    swapped = dict(generators)
    swapped[LesionClass.CYST] = generators[LesionClass.METASTASIS]
    with pytest.raises(ValidationError):
        build_synth_groups(swapped, (9,), seed=0)


# -- leakage guard ---------------------------------------------------------------------


def test_guard_accepts_clean_pool():
    guard = LeakageGuard([lesion(0), lesion(1)])
    guard.check([lesion(2), lesion(3)], "train")
    assert guard.checks == 1


def test_guard_fires_on_planted_items(small_phantom):
    test = small_phantom.items[:5]
    guard = LeakageGuard(test)
    derived = LesionROI(pixels=np.zeros((8, 8)), diameter_px=4.0, label=0, patient_id="other",
                        lesion_id="x#1", provenance=Provenance.CLASSIC_AUG, origin=test[0].lesion_id,
                        lineage=frozenset({test[0].lesion_id}))
    same_patient = LesionROI(pixels=np.zeros((8, 8)), diameter_px=4.0, label=0, patient_id=test[1].patient_id,
                             lesion_id="new")
    for planted in (test[2], derived, same_patient):
        with pytest.raises(LeakageError):
            guard.check([lesion(99), planted], "train")
    with pytest.raises(LeakageError):
        guard.check_lineage({"zz", test[3].lesion_id}, "generator")
