"""Cross-validated learning curves for classic and GAN augmentation.

Two modes:

``aug``
    one curve point per classic group, trained on the union of the
    training folds' groups and tested on the held-out fold's originals.
``aug-gan``
    the ``aug`` curve, then one point per synthetic add-on stacked on the
    saturating ("optimal") classic group. Class GANs for each split are
    trained on that split's optimal classic group.

Every training pool (classifier or GAN) passes a :class:`LeakageGuard` for
its test fold before any training starts.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..augment import AugmentationPlan
from ..classifier import ClassifierConfig, config_dict, fit_arrays, predict_proba
from ..data import Dataset, LesionClass, LesionROI, require_real
from ..dcgan import GanTrainConfig, TrainedGenerator, train_gan
from ..errors import ValidationError
from ..seeding import derive_seed
from .curve import DEFAULT_EPSILON, CurvePoint, find_saturation
from .folds import FoldSplit, make_folds
from .groups import DataGroupSchedule, RenderCache, build_nested_groups, build_synth_groups
from .leakage import LeakageGuard
from .metrics import ConfusionMatrix, accuracy, confusion_matrix

log = logging.getLogger(__name__)

MODES = ("aug", "aug-gan")

# hook(kind, test_fold, pool_name, items) -> items, called on every training
# pool before the leakage guard. Used to test the guard end to end.
PoolHook = Callable[[str, int, str, list[LesionROI]], list[LesionROI]]


@dataclass(frozen=True)
class ExperimentConfig:
    folds: int = 3
    plan: AugmentationPlan = field(default_factory=AugmentationPlan)
    schedule: DataGroupSchedule = field(default_factory=DataGroupSchedule)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0

    def __post_init__(self) -> None:
        if self.folds < 2:
            raise ValidationError("need at least 2 folds")
        if self.epsilon < 0:
            raise ValidationError("saturation epsilon must be non-negative")


@dataclass
class ExperimentResult:
    mode: str
    split: FoldSplit
    classic: list[CurvePoint]
    optimal: int
    synthetic: list[CurvePoint] = field(default_factory=list)
    provenance: list[dict] = field(default_factory=list)
    guard_checks: int = 0


@dataclass(frozen=True)
class _Job:
    mode: str
    group: int
    fold: int
    seed: int


def _fit_eval(x, y, x_test, y_test, config: ClassifierConfig, seed: int) -> np.ndarray:
    net, _ = fit_arrays(x, y, config, seed)
    preds = predict_proba(net, x_test).argmax(axis=1)
    return confusion_matrix(preds, y_test).counts


def _train_points(
    jobs: list[_Job],
    pools: dict[tuple[int, int], Dataset],
    tests: list[Dataset],
    config: ClassifierConfig,
    workers: int,
) -> dict[tuple[int, int], ConfusionMatrix]:
    """Train and evaluate one classifier per job; results keyed by (group, fold)."""

    def args(job: _Job):
        x, y = pools[(job.group, job.fold)].arrays(np.float32)
        xt, yt = tests[job.fold].arrays(np.float32)
        return x, y, xt, yt, config, job.seed

    out: dict[tuple[int, int], ConfusionMatrix] = {}
    if workers <= 1:
        for job in jobs:
            counts = _fit_eval(*args(job))
            out[(job.group, job.fold)] = ConfusionMatrix(counts)
            log.info("event=classifier mode=%s group=%d fold=%d accuracy=%.4f",
                     job.mode, job.group + 1, job.fold, accuracy(out[(job.group, job.fold)]))
        return out
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futures = {(job.group, job.fold): ex.submit(_fit_eval, *args(job)) for job in jobs}
        for job in jobs:
            out[(job.group, job.fold)] = ConfusionMatrix(futures[(job.group, job.fold)].result())
            log.info("event=classifier mode=%s group=%d fold=%d accuracy=%.4f",
                     job.mode, job.group + 1, job.fold, accuracy(out[(job.group, job.fold)]))
    return out


def _curve(sizes: Sequence[int], results, pools, k: int) -> list[CurvePoint]:
    points = []
    for g, size in enumerate(sizes):
        cms = [results[(g, t)] for t in range(k)]
        total = cms[0]
        for cm in cms[1:]:
            total = total + cm
        points.append(
            CurvePoint(
                train_size_per_fold=int(size),
                fold_accuracies=tuple(accuracy(cm) for cm in cms),
                train_sizes=tuple(len(pools[(g, t)]) for t in range(k)),
                confusion=total,
            )
        )
    return points


def _merge(parts: Sequence[Dataset], name: str) -> Dataset:
    return Dataset(tuple(x for p in parts for x in p), name)


def run_experiment(
    dataset: Dataset,
    mode: str,
    config: ExperimentConfig,
    jobs: int = 1,
    hook: PoolHook | None = None,
    gan_dir=None,
) -> ExperimentResult:
    """Run the cross-validated protocol and return both learning curves.

    Raises:
        ValidationError: bad mode, configuration or dataset.
        LeakageError: a training pool contains test-fold material.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    require_real(dataset.items, "experiment dataset")
    k, seed = config.folds, config.seed
    hook = hook or (lambda kind, fold, name, items: items)
    split = make_folds(dataset, k, derive_seed(seed, "folds"))
    tests = split.folds(dataset)
    guards = [LeakageGuard(t) for t in tests]
    provenance: list[dict] = [
        {"event": "folds", "seed": derive_seed(seed, "folds"), "sizes": [len(t) for t in tests]}
    ]
    log.info("event=folds sizes=%s", ",".join(str(len(t)) for t in tests))

    aug_seed = derive_seed(seed, "augment")
    cache = RenderCache(config.plan, aug_seed)
    sizes = config.schedule.classic
    fold_groups = [build_nested_groups(t, config.plan, sizes, aug_seed, cache) for t in tests]
    log.info("event=groups sizes=%s", ";".join(",".join(str(len(g)) for g in fg) for fg in fold_groups))

    def guarded(kind: str, t: int, name: str, items: Sequence[LesionROI]) -> Dataset:
        items = hook(kind, t, name, list(items))
        guards[t].check(items, f"{kind} pool {name} (test fold {t})")
        return Dataset(tuple(items), name)

    pools: dict[tuple[int, int], Dataset] = {}
    for g in range(len(sizes)):
        for t in range(k):
            parts = [fold_groups[f][g] for f in range(k) if f != t]
            pools[(g, t)] = guarded("classifier", t, f"aug-g{g + 1}", _merge(parts, "").items)

    clf_jobs = [
        _Job("aug", g, t, derive_seed(seed, "classifier", "aug", g, t)) for g in range(len(sizes)) for t in range(k)
    ]
    provenance += [
        {"event": "classifier", "mode": j.mode, "group": j.group + 1, "fold": j.fold, "seed": j.seed,
         "train_size": len(pools[(j.group, j.fold)]), "config": config_dict(config.classifier)}
        for j in clf_jobs
    ]
    results = _train_points(clf_jobs, pools, tests, config.classifier, jobs)
    classic = _curve(sizes, results, pools, k)
    optimal = find_saturation(classic, config.epsilon)
    log.info("event=saturation group=%d size=%d accuracy=%.4f", optimal + 1, sizes[optimal], classic[optimal].mean_accuracy)
    result = ExperimentResult(mode, split, classic, optimal, provenance=provenance)

    if mode == "aug-gan" and config.schedule.synthetic:
        result.synthetic = _gan_points(config, tests, fold_groups, pools, optimal, guarded, guards, provenance, jobs, gan_dir)
    result.guard_checks = sum(g.checks for g in guards)
    return result


def _gan_points(config, tests, fold_groups, pools, optimal, guarded, guards, provenance, jobs, gan_dir):
    k, seed = config.folds, config.seed
    gan_pools = {
        (t, c): guarded("gan", t, f"gan-{c.name.lower()}",
                        [x for f in range(k) if f != t for x in fold_groups[f][optimal] if x.label is c])
        for t in range(k)
        for c in LesionClass
    }
    generators: dict[int, dict[LesionClass, TrainedGenerator]] = {t: {} for t in range(k)}
    for (t, c), pool in gan_pools.items():
        gcfg = GanTrainConfig(**{**asdict(config.gan), "seed": derive_seed(seed, "gan", t, c.name)})
        tag = f"gan-t{t}-{c.name.lower()}"
        out = None
        if gan_dir is not None:
            out = gan_dir / tag
            out.mkdir(parents=True, exist_ok=True)
        gen, history = train_gan(pool, gcfg, out, tag=tag)
        guards[t].check_lineage(gen.lineage, f"generator {tag}")
        generators[t][c] = gen
        provenance.append(
            {"event": "gan", "fold": t, "class": c.display, "seed": gcfg.seed, "pool_size": len(pool),
             "config_hash": gcfg.digest(), "checkpoint_id": tag, "epochs": len(history.epoch),
             "final_d_loss": history.d_loss[-1] if history.d_loss else None,
             "final_g_loss": history.g_loss[-1] if history.g_loss else None}
        )
        log.info("event=gan fold=%d class=%s pool=%d", t, c.display, len(pool))

    synth_sizes = config.schedule.synthetic
    synth_pools: dict[tuple[int, int], Dataset] = {}
    for t in range(k):
        per_split = [(k - 1) * s for s in synth_sizes]
        groups = build_synth_groups(generators[t], per_split, derive_seed(seed, "synth", t))
        for j, sg in enumerate(groups):
            synth_pools[(j, t)] = guarded("classifier", t, f"aug-gan-s{j + 1}", pools[(optimal, t)].items + sg.items)
    jobs_list = [
        _Job("aug-gan", j, t, derive_seed(seed, "classifier", "aug-gan", j, t))
        for j in range(len(synth_sizes))
        for t in range(k)
    ]
    provenance += [
        {"event": "classifier", "mode": j.mode, "group": j.group + 1, "fold": j.fold, "seed": j.seed,
         "train_size": len(synth_pools[(j.group, j.fold)]), "config": config_dict(config.classifier)}
        for j in jobs_list
    ]
    results = _train_points(jobs_list, synth_pools, tests, config.classifier, jobs)
    base = config.schedule.classic[optimal]
    return _curve([base + s for s in synth_sizes], results, synth_pools, k)
