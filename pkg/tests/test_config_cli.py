import csv
import json

import numpy as np
import pytest

from lesionaug import cli
from lesionaug.config import RunConfig, from_dict, load_config, preset
from lesionaug.data import load_dataset
from lesionaug.errors import LeakageError, ValidationError
from test_metrics import CLASSIC_TABLE, GAN_TABLE

TINY = {
    "seed": 3,
    "phantom": {"n_per_class": [6, 6, 6], "diameter_range": [10, 30]},
    "augmentation": {"n_rot": 2, "n_flip": 1, "n_trans": 1, "n_scale": 1},
    "schedule": {"classic": [12, 30], "synthetic": [6, 12]},
    "classifier": {"channels": [4, 4, 4], "hidden": 8, "batch_size": 8, "epochs": 1, "max_steps": 2},
    "gan": {"width": 64, "batch_size": 4, "epochs": 1, "max_steps": 1, "checkpoint_every": 0},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


# -- config ---------------------------------------------------------------------------


def test_toml_and_json_agree(tmp_path):
    (tmp_path / "a.toml").write_text("seed = 4\n[classifier]\nchannels = [4, 8, 16]\nhidden = 12\n")
    (tmp_path / "a.json").write_text(json.dumps({"seed": 4, "classifier": {"channels": [4, 8, 16], "hidden": 12}}))
    a, b = load_config(tmp_path / "a.toml"), load_config(tmp_path / "a.json")
    assert a == b and a.digest() == b.digest()
    assert a.classifier.channels == (4, 8, 16)


def test_shipped_configs_match_presets():
    from pathlib import Path

    root = Path(__file__).parent.parent / "configs"
    assert load_config(root / "default.toml").digest() == preset("default").digest()
    assert load_config(root / "desk.toml").digest() == preset("desk").digest()


def test_digest_covers_every_field():
    base = RunConfig()
    assert from_dict({"classifier": {"lr": 0.002}}).digest() != base.digest()
    assert from_dict({"gan": {"latent": "normal"}}).digest() != base.digest()
    assert base.with_seed(1).digest() != base.digest()


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"classifier": {"depth": 3}}, {"seed": "x"},
                                 {"schedule": {"classic": [5, 4]}}, {"gan": []}])
def test_bad_config_rejected(doc):
    with pytest.raises(ValidationError):
        from_dict(doc)


def test_preset_derives_module_seeds():
    cfg = preset("desk").with_seed(7)
    assert cfg.experiment_config().seed == 7
    assert cfg.phantom_config().seed != preset("desk").phantom_config().seed


# -- exit codes ------------------------------------------------------------------------


def test_usage_errors_exit_64(capsys):
    assert run("no-such-command") == 64
    assert run("phantom", "--bogus-flag") == 64
    assert run("gan-sample") == 64
    assert run("phantom", "--jobs", "0") == 64


def test_validation_errors_exit_1(tmp_path):
    assert run("augment", "--manifest", tmp_path / "missing.csv", "--out", tmp_path / "o") == 1
    assert run("phantom", "--config", tmp_path / "missing.toml", "--out", tmp_path / "o") == 1
    assert run("report", tmp_path / "nothing-here") == 1


def test_runtime_errors_exit_2(tmp_path, tiny_config, monkeypatch):
    def leak(*a, **k):
        raise LeakageError("planted")

    monkeypatch.setattr(cli, "run_experiment", leak)
    assert run("experiment", "--config", tiny_config, "--out", tmp_path / "o") == 2


# -- subcommands ----------------------------------------------------------------------


def test_phantom_then_augment(tmp_path, tiny_config):
    assert run("phantom", "--config", tiny_config, "--out", tmp_path / "ph") == 0
    manifest = tmp_path / "ph" / "manifest.csv"
    assert len(load_dataset(manifest, tmp_path / "ph")) == 18
    snap = json.loads((tmp_path / "ph" / "config.json").read_text())
    assert snap["config_hash"] == load_config(tiny_config).digest()
    before = manifest.read_bytes()
    assert run("augment", "--config", tiny_config, "--manifest", manifest, "--out", tmp_path / "aug") == 0
    assert manifest.read_bytes() == before  # inputs are not mutated
    with open(tmp_path / "aug" / "manifest.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 18 * 8
    assert {"theta", "provenance", "origin"} <= set(rows[0])


def test_augment_row_count_at_fold_scale():
    from lesionaug.augment import AugmentationPlan, plan_size

    assert 63 * plan_size(AugmentationPlan(30, 3, 7, 5)) == 30240


def test_gan_train_and_sample(tmp_path, tiny_config):
    assert run("gan-train", "--config", tiny_config, "--class", "cyst", "--out", tmp_path / "g") == 0
    ckpt = tmp_path / "g" / "gan-cyst_final.ckpt"
    assert ckpt.exists() and (tmp_path / "g" / "gan-cyst_log.json").exists()
    assert run("gan-sample", "--config", tiny_config, "--checkpoint", ckpt, "-n", 10, "--out", tmp_path / "s") == 0
    synth = load_dataset(tmp_path / "s" / "manifest.csv", tmp_path / "s")
    assert len(synth) == 10 and all(i.label.display == "Cyst" for i in synth)
    assert (tmp_path / "s" / "grid.png").exists()


def test_clf_train_with_test_set(tmp_path, tiny_config):
    run("phantom", "--config", tiny_config, "--out", tmp_path / "ph")
    m = tmp_path / "ph" / "manifest.csv"
    assert run("clf-train", "--config", tiny_config, "--manifest", m, "--test-manifest", m, "--out", tmp_path / "c") == 0
    for name in ("classifier.ckpt", "history.csv", "confusion_test.json", "config.json"):
        assert (tmp_path / "c" / name).exists()


def test_report_prints_weighted_aggregates(tmp_path, capsys):
    for name, table in (("classic", CLASSIC_TABLE), ("gan", GAN_TABLE)):
        (tmp_path / f"confusion_{name}.json").write_text(json.dumps({"counts": table.tolist()}))
    assert run("report", tmp_path) == 0
    lines = capsys.readouterr().out.splitlines()
    classic = next(line for line in lines if "confusion_classic" in line)
    gan = next(line for line in lines if "confusion_gan" in line)
    assert "weighted_sensitivity=78.6" in classic and "weighted_specificity=88.4" in classic
    assert "weighted_sensitivity=85.7" in gan and "weighted_specificity=92.4" in gan


def test_experiment_tiny_outputs_deterministic(tmp_path, tiny_config):
    for name in ("a", "b"):
        assert run("experiment", "--config", tiny_config, "--out", tmp_path / name) == 0
    for f in ("report.json", "curve.csv", "provenance.jsonl", "config.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    assert (tmp_path / "a" / "curve.png").exists()
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert len(report["curves"]["aug"]) == 2 and len(report["curves"]["aug-gan"]) == 2


def test_rater_export(tmp_path, tiny_config):
    run("phantom", "--config", tiny_config, "--out", tmp_path / "ph")
    run("gan-train", "--config", tiny_config, "--class", "cyst", "--out", tmp_path / "g")
    run("gan-sample", "--config", tiny_config, "--checkpoint", tmp_path / "g" / "gan-cyst_final.ckpt",
        "-n", 6, "--out", tmp_path / "s")
    args = ["rater-export", "--config", tiny_config, "--real-manifest", tmp_path / "ph" / "manifest.csv",
            "--synth-manifest", tmp_path / "s" / "manifest.csv", "--n-real", 18, "--n-synth", 6]
    assert run(*args, "--out", tmp_path / "r1") == 0
    assert run(*args, "--out", tmp_path / "r2") == 0
    key1 = (tmp_path / "r1" / "key.csv").read_text()
    assert key1 == (tmp_path / "r2" / "key.csv").read_text()
    with open(tmp_path / "r1" / "key.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 24 and len({r["file"] for r in rows}) == 24
    assert sorted(p.name for p in (tmp_path / "r1" / "images").iterdir()) == sorted(r["file"] for r in rows)
    assert run(*args[:-1], 7, "--out", tmp_path / "r3") == 1
