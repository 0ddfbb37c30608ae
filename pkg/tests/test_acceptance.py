"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict that the terminal summary
prints under "acceptance criteria".
"""

import json
import math

import numpy as np
import pytest

from lesionaug import cli
from lesionaug.augment import AugmentationPlan, augment, draw_transforms, plan_size, to_roi
from lesionaug.classifier import ClassifierConfig, build_classifier
from lesionaug.data import Dataset, LesionClass, LesionROI, Provenance, merge
from lesionaug.dcgan import (
    GanArchitecture,
    GanTrainConfig,
    build_discriminator,
    build_gan,
    build_generator,
    gan_train_step,
    generator_forward,
    sample_latent,
    synthesize,
    to_tanh_range,
    train_gan,
)
from lesionaug.errors import LeakageError
from lesionaug.experiment.curve import find_saturation
from lesionaug.experiment.folds import make_folds
from lesionaug.experiment.groups import DataGroupSchedule, RenderCache, build_nested_groups
from lesionaug.experiment.metrics import (
    ConfusionMatrix,
    accuracy,
    class_sensitivity,
    class_specificity,
    weighted_aggregate,
)
from lesionaug.experiment.runner import ExperimentConfig, run_experiment
from lesionaug.nn import functional as F
from lesionaug.phantom import PhantomConfig, generate_phantom_dataset
from lesionaug.seeding import derive_seed
from oracles import central_diff, rel_err, saturation_bruteforce

VERDICTS = {}


def verdict(n, title, ok, detail):
    VERDICTS[n] = f"criterion {n} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    assert ok, VERDICTS[n]


# -- 1 ---------------------------------------------------------------------------------

TABLES = {
    "classic": (np.array([[52, 1, 0], [2, 44, 18], [0, 18, 47]]),
                (98.1, 68.7, 72.3), (98.4, 83.9, 84.6), 78.6, 88.4, 78.6),
    "gan": (np.array([[53, 0, 0], [2, 52, 10], [1, 13, 51]]),
            (100.0, 81.2, 78.5), (97.7, 89.0, 91.4), 85.7, 92.4, 85.7),
}


def test_criterion_1_metric_oracle():
    worst = 0.0
    for counts, sens, spec, wsens, wspec, acc in TABLES.values():
        cm = ConfusionMatrix(counts)
        got = [100 * class_sensitivity(cm, c) for c in range(3)] + [100 * class_specificity(cm, c) for c in range(3)]
        got += [100 * weighted_aggregate(cm, class_sensitivity), 100 * weighted_aggregate(cm, class_specificity),
                100 * accuracy(cm)]
        want = list(sens) + list(spec) + [wsens, wspec, acc]
        worst = max(worst, max(abs(g - w) for g, w in zip(got, want)))
    verdict(1, "metric oracle on both reference confusion matrices", worst <= 0.1 + 1e-9, f"max deviation {worst:.3f} pp")


# -- 2 ---------------------------------------------------------------------------------


def _plain(i, label):
    return LesionROI(pixels=np.full((64, 64), 0.5), diameter_px=20.0, label=label, patient_id=f"p{i}",
                     lesion_id=f"l{i}")


def test_criterion_2_augmentation_arithmetic(standard_phantom):
    plan = AugmentationPlan(30, 3, 7, 5)
    lesions = standard_phantom.items[:63]
    total = sum(len(draw_transforms(r, plan, 0)) for r in lesions)
    ok = plan_size(plan) == 480 and total == 30240
    small = AugmentationPlan(2, 1, 1, 1)
    rng = np.random.default_rng(0)
    bad = 0
    for trial in range(100):
        n = int(rng.integers(1, 13))
        lesions = [_plain(i, i % 3) for i in range(n)]
        extras = rng.choice(n * plan_size(small) + 1, size=int(rng.integers(1, 5)), replace=False)
        sizes = sorted({n, *(n + int(e) for e in extras)})
        if len(sizes) < 2:
            sizes = [n, n + 1]
        seed = int(rng.integers(1 << 30))
        groups = build_nested_groups(lesions, small, sizes, seed, RenderCache(small, seed))
        ids = [{(x.lesion_id, x.aug_index) for x in g} for g in groups]
        nested = all(a <= b for a, b in zip(ids, ids[1:])) and [len(g) for g in groups] == sizes
        balanced = True
        for g in groups:
            counts = [sum(1 for x in g if x.origin == f"l{i}" and x.provenance is Provenance.CLASSIC_AUG)
                      for i in range(n)]
            balanced &= max(counts) - min(counts) <= 1
        bad += not (nested and balanced)
    verdict(2, "480 per lesion, 30,240 per 63 lesions, nesting and balance", ok and bad == 0,
            f"per lesion {plan_size(plan)}, total {total}, {100 - bad}/100 schedules nested and balanced")


# -- 3 ---------------------------------------------------------------------------------


def _grad_cases(rng):
    """Yields (name, forward, backward, arrays) for random small shapes."""
    for _ in range(4):
        n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        k = int(rng.choice([1, 3, 5]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1))
        h = int(rng.integers(k, k + 4))
        x, w, b = rng.normal(size=(n, c, h, h)), rng.normal(size=(o, c, k, k)), rng.normal(size=o)
        yield "conv2d", (lambda x=x, w=w, b=b, s=stride, p=pad: F.conv2d(x, w, b, s, p)), F.conv2d_backward, (x, w, b)
    for _ in range(4):
        n, ci, co = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 3)
        k, stride = int(rng.choice([3, 5])), int(rng.integers(1, 3))
        pad = int(rng.integers(0, k // 2 + 1))
        op = int(rng.integers(0, stride))
        h = int(rng.integers(2, 5))
        x, w, b = rng.normal(size=(n, ci, h, h)), rng.normal(size=(ci, co, k, k)), rng.normal(size=co)
        yield ("conv2d_transpose", (lambda x=x, w=w, b=b, s=stride, p=pad, q=op: F.conv2d_transpose(x, w, b, s, p, q)),
               F.conv2d_transpose_backward, (x, w, b))
    for _ in range(3):
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        yield "dense", (lambda x=x, w=w, b=b: F.dense(x, w, b)), F.dense_backward, (x, w, b)
    for _ in range(3):
        c = int(rng.integers(1, 4))
        x, g, bt = rng.normal(size=(3, c, 3, 2)), rng.normal(size=c), rng.normal(size=c)
        fwd = lambda x=x, g=g, bt=bt, c=c: F.batchnorm2d(x, g, bt, np.zeros(c), np.ones(c), update_stats=False)  # noqa: E731
        yield "batchnorm2d", fwd, F.batchnorm2d_backward, (x, g, bt)
    for name in ("relu", "leaky_relu", "tanh", "sigmoid"):
        x = rng.normal(size=(2, 2, 3, 3))
        x[np.abs(x) < 1e-3] = 0.1
        fn, bw = getattr(F, name), getattr(F, name + "_backward")
        yield name, (lambda x=x, fn=fn: fn(x)), (lambda d, cache, bw=bw: (bw(d, cache),)), (x,)
    for _ in range(2):
        x = rng.permutation(32).reshape(2, 1, 4, 4).astype(float)
        yield "maxpool2d", (lambda x=x: F.maxpool2d(x)), (lambda d, cache: (F.maxpool2d_backward(d, cache),)), (x,)


def test_criterion_3_gradient_suite():
    rng = np.random.default_rng(0)
    worst, cases = 0.0, 0
    for name, fwd, bwd, arrays in _grad_cases(rng):
        out, cache = fwd()
        r = rng.normal(size=out.shape)
        analytic = bwd(r, cache)
        for arr, g in zip(arrays, analytic):
            num = central_diff(lambda: float(np.sum(fwd()[0] * r)), arr)
            worst = max(worst, rel_err(g, num))
        cases += 1
    for _ in range(3):
        logits, labels = rng.normal(size=(4, 3)), rng.integers(0, 3, size=4)
        g = F.softmax_crossentropy_backward(F.softmax_crossentropy(logits, labels)[1])
        worst = max(worst, rel_err(g, central_diff(lambda: F.softmax_crossentropy(logits, labels)[0], logits)))
        p, t = rng.uniform(0.1, 0.9, size=(4, 1)), rng.integers(0, 2, size=(4, 1)).astype(float)
        g = F.bce_backward(F.bce(p, t)[1])
        worst = max(worst, rel_err(g, central_diff(lambda: F.bce(p, t)[0], p)))
        cases += 2
    adj = 0.0
    for _ in range(20):
        k, stride = int(rng.choice([3, 5])), 2
        pad = k // 2
        h = int(rng.integers(2, 6)) * 2
        u = rng.normal(size=(2, 2, h, h))
        w = rng.normal(size=(3, 2, k, k))
        y = F.conv2d(u, w, None, stride, pad)[0]
        v = rng.normal(size=y.shape)
        back = F.conv2d_transpose(v, w, None, stride, pad, 1)[0]
        adj = max(adj, abs(np.sum(y * v) - np.sum(u * back)))
    verdict(3, "finite-difference gradients and transpose adjoint", cases >= 20 and worst < 1e-4 and adj < 1e-6,
            f"{cases} cases, max rel err {worst:.2e}, max adjoint gap {adj:.2e}")


# -- 4 ---------------------------------------------------------------------------------


def test_criterion_4_shape_suite():
    rng = np.random.default_rng(0)
    gen = build_generator(GanArchitecture(), rng)
    img = generator_forward(gen, sample_latent(rng, 1))
    gshapes = dict(gen.trace)
    g_chain = [gshapes["fc"][1:]] + [gshapes[k][1:] for k in ("relu0", "relu1", "relu2", "relu3")] + [img.shape[1:]]
    disc = build_discriminator(GanArchitecture(), rng)
    disc.forward(img)
    dshapes = dict(disc.trace)
    d_chain = [dshapes[k][1:] for k in ("lrelu1", "lrelu2", "lrelu3", "lrelu4", "fc")]
    clf = build_classifier(ClassifierConfig())
    clf.forward(np.zeros((1, 1, 64, 64), np.float32))
    cshapes = dict(clf.trace)
    c_chain = [cshapes[k][2] for k in ("relu1", "pool1", "pool2", "pool3")]
    ok = (g_chain == [(16384,), (1024, 4, 4), (512, 8, 8), (256, 16, 16), (128, 32, 32), (1, 64, 64)]
          and d_chain == [(128, 32, 32), (256, 16, 16), (512, 8, 8), (1024, 4, 4), (1,)]
          and c_chain == [64, 32, 16, 8])
    verdict(4, "generator, discriminator and classifier shape chains", ok,
            f"G {g_chain[1:]}, D {d_chain}, classifier {c_chain}")


# -- 5 ---------------------------------------------------------------------------------

LEAK_CONFIG = ExperimentConfig(
    plan=AugmentationPlan(2, 1, 1, 1),
    schedule=DataGroupSchedule((6, 12), (6,)),
    classifier=ClassifierConfig(channels=(4, 4, 4), hidden=8, batch_size=8, epochs=1, max_steps=1),
    gan=GanTrainConfig(width=64, batch_size=4, epochs=1, max_steps=1, checkpoint_every=0),
    seed=5,
)


def test_criterion_5_leakage_guard():
    ds = generate_phantom_dataset(PhantomConfig(n_per_class=(6, 6, 6), diameter_range=(10, 30), seed=4))
    tests = make_folds(ds, 3, derive_seed(LEAK_CONFIG.seed, "folds")).folds(ds)
    rng = np.random.default_rng(1)
    aborted = 0
    for trial in range(100):
        kind = "gan" if trial % 5 == 4 else "classifier"
        fold = int(rng.integers(3))
        victim = tests[fold].items[int(rng.integers(len(tests[fold])))]
        form = trial % 3
        if form == 0:
            planted = victim
        elif form == 1:
            planted = to_roi(victim, augment(victim, AugmentationPlan(1, 0, 0, 0), trial)[0])
        else:
            planted = LesionROI(pixels=victim.pixels, diameter_px=victim.diameter_px, label=victim.label,
                                patient_id="synthetic:x", lesion_id=f"x#s{trial}", provenance=Provenance.SYNTHETIC,
                                origin="x", lineage=frozenset({victim.lesion_id}))
        state = {"planted": False}

        def hook(k, t, name, items):
            if k == kind and t == fold and not state["planted"]:
                state["planted"] = True
                return items + [planted]
            return items

        try:
            run_experiment(ds, "aug-gan" if kind == "gan" else "aug", LEAK_CONFIG, hook=hook)
        except LeakageError:
            aborted += 1
    verdict(5, "planted test lesions and derivatives abort the run", aborted == 100, f"{aborted}/100 aborted")


# -- 6 ---------------------------------------------------------------------------------


def test_criterion_6_gan_smoke(standard_phantom):
    target = to_tanh_range(standard_phantom.items[0].pixels)[None, None]
    gan = build_gan(GanTrainConfig(width=32, batch_size=8, lr=1e-3, seed=4), LesionClass.CYST)
    probe = sample_latent(np.random.default_rng(5), 16)
    mae = lambda: float(np.abs(generator_forward(gan.generator, probe) - target).mean())  # noqa: E731
    mae0 = mae()
    rng = np.random.default_rng(0)
    for _ in range(200):
        gan_train_step(gan, np.repeat(target, 8, axis=0), rng)
    mae200 = mae()

    real = Dataset(tuple(i for i in standard_phantom if i.label is LesionClass.HEMANGIOMA))
    aug = [to_roi(r, s) for r in real for s in augment(r, AugmentationPlan(2, 0, 0, 0), 0)]
    pool = merge([real, Dataset(tuple(aug))])
    gen, _ = train_gan(pool, GanTrainConfig(width=32, batch_size=32, epochs=30, seed=0))
    synth = np.stack([s.pixels for s in synthesize(gen, 500, seed=1)])
    train = np.stack([r.pixels for r in pool])
    dmean, dstd = abs(synth.mean() - train.mean()), abs(synth.std() - train.std())
    verdict(6, "memorization and 30-epoch phantom moments", mae200 < mae0 and dmean < 0.15 and dstd < 0.15,
            f"MAE {mae0:.3f} -> {mae200:.3f}, mean gap {dmean:.3f}, std gap {dstd:.3f}")


# -- 7 and 8 -----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    codes = [cli.main(["experiment", "--config", "@desk", "--seed", "0", "--out", str(root / r)]) for r in ("a", "b")]
    return root / "a", root / "b", codes


def test_criterion_7_desk_experiment(desk_runs):
    a, b, codes = desk_runs
    report = json.loads((a / "report.json").read_text())
    opt = report["optimal"]["mean_accuracy"]
    base = report["no_augmentation_accuracy"]
    gain = opt - base
    produced = (a / "curve.png").stat().st_size > 0 and len(report["curves"]["aug-gan"]) == 2
    same = (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    ok = codes == [0, 0] and gain >= 0.05 and produced and same
    synth = ", ".join(f"{100 * p['mean_accuracy']:.1f}" for p in report["curves"]["aug-gan"])
    verdict(7, "optimal classic group beats no augmentation by >= 5 pp", ok,
            f"no-aug {100 * base:.1f}%, optimal group {report['optimal']['group']} {100 * opt:.1f}%, "
            f"gain {100 * gain:+.1f} pp; GAN points {synth}; re-run identical: {same}")


def test_criterion_8_determinism(desk_runs):
    a, b, codes = desk_runs
    same = {f: (a / f).read_bytes() == (b / f).read_bytes() for f in ("report.json", "curve.csv")}
    verdict(8, "fixed-seed experiment re-run is byte-identical", codes == [0, 0] and all(same.values()),
            ", ".join(f"{f} {'identical' if s else 'differs'}" for f, s in same.items()))


# -- 9 ---------------------------------------------------------------------------------


def test_criterion_9_saturation():
    ref = [0.57, 0.65, 0.72, 0.76, 0.78, 0.786, 0.785, 0.786, 0.784]
    index = find_saturation(ref, 0.005) + 1
    rng = np.random.default_rng(0)
    monotone = agree = True
    for _ in range(500):
        acc = list(rng.random(int(rng.integers(2, 12))))
        e1, e2 = sorted(rng.uniform(0, 0.1, 2))
        monotone &= find_saturation(acc, e2) <= find_saturation(acc, e1)
        agree &= find_saturation(acc, e1) == saturation_bruteforce(acc, e1)
    verdict(9, "saturation index and epsilon monotonicity", index == 6 and monotone and agree,
            f"reference index {index} (1-based), monotone over 500 curves: {monotone}")
