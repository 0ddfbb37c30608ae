import numpy as np
import pytest

from lesionaug.classifier import (
    ClassifierConfig,
    TrainHistory,
    build_classifier,
    evaluate,
    predict,
    predict_proba,
    train_classifier,
)
from lesionaug.data import Dataset, LesionROI, Provenance
from lesionaug.errors import ShapeError, ValidationError

SMALL = ClassifierConfig(channels=(8, 16, 32), hidden=64, seed=0)


def blank_set(counts):
    rng = np.random.default_rng(0)
    items, i = [], 0
    for label, n in enumerate(counts):
        for _ in range(n):
            items.append(LesionROI(pixels=rng.random((64, 64)), diameter_px=30.0, label=label,
                                   patient_id=f"p{i}", lesion_id=f"l{i}"))
            i += 1
    return Dataset(tuple(items))


def constant_net(label):
    net = build_classifier(SMALL)
    head = net.layers[-1][1]
    head.params["w"][:] = 0.0
    head.params["b"][:] = 0.0
    head.params["b"][label] = 5.0
    return net


def test_shape_chain_and_head():
    net = build_classifier(ClassifierConfig())
    net.forward(np.zeros((2, 1, 64, 64), np.float32))
    shapes = dict(net.trace)
    assert shapes["pool1"][2:] == (32, 32)
    assert shapes["pool2"][2:] == (16, 16)
    assert shapes["pool3"][2:] == (8, 8)
    assert shapes["head"] == (2, 3)


def test_seeds_change_parameters():
    a = build_classifier(SMALL, seed=1).parameters()
    b = build_classifier(SMALL, seed=2).parameters()
    assert not np.array_equal(a["conv1.w"], b["conv1.w"])
    c = build_classifier(SMALL, seed=1).parameters()
    assert all(np.array_equal(a[k], c[k]) for k in a)


def test_config_validation():
    with pytest.raises(ValidationError):
        ClassifierConfig(channels=(8, 16))
    with pytest.raises(ValidationError):
        ClassifierConfig(dropout=1.0)


def test_overfits_thirty_samples(small_phantom):
    cfg = ClassifierConfig(channels=(8, 16, 32), hidden=64, epochs=150, seed=1)
    net, history = train_classifier(small_phantom, cfg)
    assert len(history.epoch) == 150
    assert np.all(np.isfinite(history.train_loss))
    cm = evaluate(net, small_phantom)
    assert np.trace(cm.counts) / cm.total >= 0.95


def test_zero_epochs_returns_initial_net(small_phantom):
    cfg = ClassifierConfig(channels=(8, 16, 32), hidden=64, epochs=0)
    net, history = train_classifier(small_phantom, cfg)
    assert history.epoch == []
    init = build_classifier(cfg)
    for k, v in init.parameters().items():
        np.testing.assert_array_equal(net.parameters()[k], v)


def test_training_is_reproducible(small_phantom):
    cfg = ClassifierConfig(channels=(4, 4, 4), hidden=8, epochs=2, batch_size=8)
    a, ha = train_classifier(small_phantom, cfg)
    b, hb = train_classifier(small_phantom, cfg)
    assert ha.train_loss == hb.train_loss
    for k, v in a.parameters().items():
        np.testing.assert_array_equal(b.parameters()[k], v)


def test_missing_class_rejected():
    with pytest.raises(ValidationError):
        train_classifier(blank_set((3, 3, 0)), SMALL)
    with pytest.raises(ValidationError):
        train_classifier(Dataset(()), SMALL)


def test_zero_head_predicts_uniform():
    net = build_classifier(SMALL)
    head = net.layers[-1][1]
    head.params["w"][:] = 0.0
    head.params["b"][:] = 0.0
    np.testing.assert_allclose(predict(net, np.random.default_rng(0).random((64, 64))), 1 / 3)


def test_probabilities_normalized_and_shift_invariant():
    net = build_classifier(SMALL)
    x = np.random.default_rng(1).random((5, 64, 64))
    p = predict_proba(net, x)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    before = p.argmax(axis=1)
    net.layers[-1][1].params["b"] += 3.0
    np.testing.assert_array_equal(predict_proba(net, x).argmax(axis=1), before)


def test_predict_shape_error():
    with pytest.raises(ShapeError):
        predict(build_classifier(SMALL), np.zeros((32, 32)))


def test_constant_predictor_fills_first_column():
    cm = evaluate(constant_net(0), blank_set((53, 64, 65)))
    np.testing.assert_array_equal(cm.counts[:, 0], [53, 64, 65])
    assert cm.counts[:, 1:].sum() == 0


def test_perfect_predictor_diagonal():
    ds = blank_set((10, 10, 10))
    # one constant net per class acts as a perfect predictor
    parts = [evaluate(constant_net(c), Dataset(tuple(i for i in ds if int(i.label) == c))) for c in range(3)]
    total = parts[0] + parts[1] + parts[2]
    np.testing.assert_array_equal(total.counts, np.diag([10, 10, 10]))


def test_evaluate_refuses_augmented_items():
    item = LesionROI(pixels=np.zeros((64, 64)), diameter_px=30.0, label=0, patient_id="p", lesion_id="a#0",
                     provenance=Provenance.CLASSIC_AUG, origin="a")
    with pytest.raises(ValidationError):
        evaluate(build_classifier(SMALL), Dataset((item,)))


def test_history_csv(tmp_path):
    h = TrainHistory([1, 2], [0.9, 0.5], [0.3, 0.6])
    h.write_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines() == ["epoch,train_loss,train_acc", "1,0.9,0.3", "2,0.5,0.6"]
