"""Experiment artefacts: curve CSV, confusion matrices, report and plot.

Everything except the plot is byte-deterministic for a fixed result: keys
are sorted and no timings or paths are recorded.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .curve import CurvePoint
from .metrics import ConfusionMatrix, summarize
from .runner import ExperimentResult

CLASSIC_COLOR = "red"
SYNTH_COLOR = "blue"


def _point_name(mode: str, index: int) -> str:
    return f"{mode}_g{index + 1}"


def _point_dict(point: CurvePoint, mode: str, index: int) -> dict:
    return {
        "name": _point_name(mode, index),
        "group": index + 1,
        "train_size_per_fold": point.train_size_per_fold,
        "train_sizes": list(point.train_sizes),
        "fold_accuracies": list(point.fold_accuracies),
        "mean_accuracy": point.mean_accuracy,
        "metrics": summarize(point.confusion),
    }


def _curves(result: ExperimentResult):
    yield "aug", result.classic
    if result.synthetic:
        yield "aug-gan", result.synthetic


def write_curve_csv(result: ExperimentResult, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "group", "group_size", "fold", "train_size", "accuracy"])
        for mode, curve in _curves(result):
            for g, p in enumerate(curve):
                for fold, (acc, n) in enumerate(zip(p.fold_accuracies, p.train_sizes)):
                    w.writerow([mode, g + 1, p.train_size_per_fold, fold, n, repr(acc)])


def build_report(result: ExperimentResult, snapshot: dict) -> dict:
    curves = {mode: [_point_dict(p, mode, i) for i, p in enumerate(c)] for mode, c in _curves(result)}
    opt = result.classic[result.optimal]
    report = {
        "mode": result.mode,
        "config": snapshot,
        "folds": {
            "k": result.split.k,
            "assignment": dict(sorted(result.split.assignment.items())),
        },
        "curves": curves,
        "optimal": {
            "group": result.optimal + 1,
            "train_size_per_fold": opt.train_size_per_fold,
            "mean_accuracy": opt.mean_accuracy,
        },
        "no_augmentation_accuracy": result.classic[0].mean_accuracy,
        "augmentation_gain": opt.mean_accuracy - result.classic[0].mean_accuracy,
        "leakage_checks": result.guard_checks,
        "provenance": result.provenance,
    }
    if result.synthetic:
        best = max(range(len(result.synthetic)), key=lambda j: result.synthetic[j].mean_accuracy)
        report["best_synthetic"] = {
            "group": best + 1,
            "train_size_per_fold": result.synthetic[best].train_size_per_fold,
            "mean_accuracy": result.synthetic[best].mean_accuracy,
            "gain_over_optimal": result.synthetic[best].mean_accuracy - opt.mean_accuracy,
        }
    return report


def plot_curves(result: ExperimentResult, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    xs = [p.train_size_per_fold for p in result.classic]
    ax.plot(xs, [100 * p.mean_accuracy for p in result.classic], "o-", color=CLASSIC_COLOR, label="classic augmentation")
    if result.synthetic:
        xs_s = [p.train_size_per_fold for p in result.synthetic]
        ax.plot(xs_s, [100 * p.mean_accuracy for p in result.synthetic], "s-", color=SYNTH_COLOR,
                label="classic + synthetic")
    ax.axvline(result.classic[result.optimal].train_size_per_fold, color="gray", ls=":", lw=1)
    ax.set_xscale("log")
    ax.set_xlabel("training samples per fold")
    ax.set_ylabel("mean CV accuracy (%)")
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def write_outputs(result: ExperimentResult, out_dir: str | Path, snapshot: dict) -> dict[str, Path]:
    """Write every experiment artefact into ``out_dir``; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"curve": out / "curve.csv", "report": out / "report.json", "plot": out / "curve.png",
             "provenance": out / "provenance.jsonl"}
    write_curve_csv(result, paths["curve"])
    for mode, curve in _curves(result):
        for i, p in enumerate(curve):
            name = _point_name(mode, i)
            path = out / f"confusion_{name}.json"
            path.write_text(json.dumps({"name": name, **summarize(p.confusion)}, sort_keys=True, indent=1) + "\n")
            paths[f"confusion_{name}"] = path
    report = build_report(result, snapshot)
    paths["report"].write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    with open(paths["provenance"], "w") as fh:
        for entry in result.provenance:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    plot_curves(result, paths["plot"])
    return paths


def load_confusion(path: str | Path) -> ConfusionMatrix:
    """Read a matrix from a ``confusion_*.json`` file or a bare ``{"counts": ...}`` document."""
    doc = json.loads(Path(path).read_text())
    return ConfusionMatrix.from_dict(doc.get("confusion", doc))
