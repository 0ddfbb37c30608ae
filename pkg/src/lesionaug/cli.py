"""Command-line entry point: ``lesionaug <subcommand> [options]``.

Exit codes: 0 success, 1 validation error, 2 runtime failure (training
divergence, leakage abort), 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .augment import augment_many, plan_size, to_roi
from .classifier import config_dict, evaluate, train_classifier
from .config import RunConfig, load_config, preset
from .data import Dataset, LesionClass, load_dataset, save_dataset, write_gray_png
from .dcgan import TrainedGenerator, synthesize, tile_grid, train_gan
from .errors import IngestionError, LesionAugError, ValidationError
from .experiment.metrics import summarize
from .experiment.rater import export_rater_set
from .experiment.report import load_confusion, write_outputs
from .experiment.runner import MODES, run_experiment
from .nn.checkpoint import save_checkpoint
from .phantom import generate_phantom_dataset
from .seeding import derive_seed

log = logging.getLogger("lesionaug")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2, 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _UTCFormatter(logging.Formatter):
    converter = time.gmtime

    def formatTime(self, record, datefmt=None):
        return time.strftime("%Y-%m-%dT%H:%M:%S", self.converter(record.created)) + f".{int(record.msecs):03d}Z"


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_UTCFormatter("ts=%(asctime)s level=%(levelname)s logger=%(name)s %(message)s"))
    root = logging.getLogger("lesionaug")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


# -- shared helpers ------------------------------------------------------------


def _config(args) -> RunConfig:
    if args.config:
        cfg = preset(args.config[1:]) if args.config.startswith("@") else load_config(args.config)
    else:
        cfg = preset("desk")
    return cfg.with_seed(args.seed)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(manifest: str | None, image_root: str | None, cfg: RunConfig) -> Dataset:
    manifest = manifest or cfg.data.manifest
    if manifest is None:
        log.info("event=dataset source=phantom separability=%s", cfg.phantom.separability)
        return generate_phantom_dataset(cfg.phantom_config())
    root = image_root or cfg.data.image_root or str(Path(manifest).parent)
    ds = load_dataset(manifest, root, margin_frac=cfg.data.margin_frac)
    log.info("event=dataset source=%s items=%d", manifest, len(ds))
    return ds


# -- subcommands ---------------------------------------------------------------


def cmd_phantom(args, cfg: RunConfig) -> None:
    out = _out(args)
    ds = generate_phantom_dataset(cfg.phantom_config())
    save_dataset(ds, out)
    cfg.write_snapshot(out)
    log.info("event=phantom items=%d out=%s", len(ds), out)


def cmd_augment(args, cfg: RunConfig) -> None:
    out = _out(args)
    ds = _load(args.manifest, args.image_root, cfg)
    seed = derive_seed(cfg.seed, "augment")
    samples = augment_many(ds.items, cfg.augmentation, seed, jobs=args.jobs)
    items, rows = [], []
    for roi, per_lesion in zip(ds.items, samples):
        for s in per_lesion:
            items.append(to_roi(roi, s))
            rows.append(s.record.as_row())
    save_dataset(Dataset(tuple(items), "augmented"), out, extra=rows)
    cfg.write_snapshot(out)
    log.info("event=augment lesions=%d per_lesion=%d rows=%d", len(ds), plan_size(cfg.augmentation), len(items))


def cmd_gan_train(args, cfg: RunConfig) -> None:
    out = _out(args)
    label = LesionClass.parse(args.lesion_class)
    ds = _load(args.manifest, args.image_root, cfg).of_class(label)
    gcfg = cfg.experiment_config().gan
    gen, history = train_gan(ds, gcfg, out, tag=f"gan-{label.name.lower()}")
    cfg.write_snapshot(out)
    log.info("event=gan_train class=%s pool=%d epochs=%d d_loss=%.4f g_loss=%.4f", label.display, len(ds),
             len(history.epoch), history.d_loss[-1], history.g_loss[-1])


def cmd_gan_sample(args, cfg: RunConfig) -> None:
    out = _out(args)
    gen = TrainedGenerator.load(args.checkpoint)
    items = synthesize(gen, args.n, derive_seed(cfg.seed, "gan-sample"))
    save_dataset(Dataset(tuple(items), "synthetic"), out)
    write_gray_png(out / "grid.png", tile_grid([i.pixels for i in items]), bits=8)
    cfg.write_snapshot(out)
    log.info("event=gan_sample class=%s n=%d", gen.label.display, len(items))


def cmd_clf_train(args, cfg: RunConfig) -> None:
    out = _out(args)
    ds = _load(args.manifest, args.image_root, cfg)
    ccfg = cfg.experiment_config().classifier
    net, history = train_classifier(ds, ccfg)
    save_checkpoint(out / "classifier.ckpt", net.state(), {"config": config_dict(ccfg)})
    history.write_csv(out / "history.csv")
    if args.test_manifest:
        test = load_dataset(args.test_manifest, args.test_image_root or str(Path(args.test_manifest).parent))
        summary = summarize(evaluate(net, test))
        (out / "confusion_test.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
        log.info("event=clf_eval items=%d accuracy=%s", len(test), summary["accuracy"])
    cfg.write_snapshot(out)
    log.info("event=clf_train items=%d epochs=%d", len(ds), len(history.epoch))


def cmd_experiment(args, cfg: RunConfig) -> None:
    out = _out(args)
    cfg.write_snapshot(out)
    ds = _load(None, None, cfg)
    gan_dir = out / "generators" if args.mode == "aug-gan" else None
    result = run_experiment(ds, args.mode, cfg.experiment_config(), jobs=args.jobs, gan_dir=gan_dir)
    write_outputs(result, out, cfg.snapshot())
    opt = result.classic[result.optimal]
    log.info("event=experiment_done mode=%s optimal_group=%d optimal_accuracy=%.4f no_aug_accuracy=%.4f",
             args.mode, result.optimal + 1, opt.mean_accuracy, result.classic[0].mean_accuracy)


def _format_summary(name: str, s: dict) -> str:
    pct = lambda v: "nan" if v is None else f"{100 * v:.1f}"  # noqa: E731
    parts = [f"source={name}", f"accuracy={pct(s['accuracy'])}",
             f"weighted_sensitivity={pct(s['weighted_sensitivity'])}",
             f"weighted_specificity={pct(s['weighted_specificity'])}"]
    parts += [f"sensitivity_{k.lower()}={pct(v)}" for k, v in s["sensitivity"].items()]
    parts += [f"specificity_{k.lower()}={pct(v)}" for k, v in s["specificity"].items()]
    return " ".join(parts)


def cmd_report(args, cfg: RunConfig) -> None:
    paths = []
    for p in map(Path, args.paths):
        paths.extend(sorted(p.glob("confusion_*.json")) if p.is_dir() else [p])
    if not paths:
        raise ValidationError("no confusion matrices found")
    for p in paths:
        try:
            cm = load_confusion(p)
        except (OSError, KeyError, ValueError) as exc:
            raise ValidationError(f"cannot read confusion matrix {p}: {exc}") from None
        print(_format_summary(p.name, summarize(cm)))


def cmd_rater_export(args, cfg: RunConfig) -> None:
    out = _out(args)
    real = load_dataset(args.real_manifest, str(Path(args.real_manifest).parent))
    synth = load_dataset(args.synth_manifest, str(Path(args.synth_manifest).parent))
    export = export_rater_set(real, synth, args.n_real, args.n_synth, cfg.seed, out)
    log.info("event=rater_export items=%d key=%s", len(export.names), export.key_path)


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML/JSON run config, or @default / @desk for a preset (default @desk)")
    common.add_argument("--seed", type=int, help="root seed, overrides the config")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    data = _Parser(add_help=False)
    data.add_argument("--manifest", help="lesion manifest CSV; default: the configured phantom")
    data.add_argument("--image-root", help="directory image paths are relative to (default: manifest dir)")

    p = _Parser(prog="lesionaug", description="Classic and GAN augmentation for lesion-ROI classification.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("phantom", parents=[common], help="generate a phantom dataset").set_defaults(fn=cmd_phantom)
    sub.add_parser("augment", parents=[common, data], help="classic augmentation of every lesion").set_defaults(
        fn=cmd_augment)

    g = sub.add_parser("gan-train", parents=[common, data], help="train one class GAN")
    g.add_argument("--class", dest="lesion_class", required=True, choices=[c.display.lower() for c in LesionClass])
    g.set_defaults(fn=cmd_gan_train)

    s = sub.add_parser("gan-sample", parents=[common], help="draw synthetic ROIs from a generator checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("-n", type=int, required=True)
    s.set_defaults(fn=cmd_gan_sample)

    c = sub.add_parser("clf-train", parents=[common, data], help="train the lesion classifier")
    c.add_argument("--test-manifest")
    c.add_argument("--test-image-root")
    c.set_defaults(fn=cmd_clf_train)

    e = sub.add_parser("experiment", parents=[common], help="cross-validated augmentation experiment")
    e.add_argument("--mode", choices=MODES, default="aug-gan")
    e.set_defaults(fn=cmd_experiment)

    r = sub.add_parser("report", parents=[common], help="print metrics for stored confusion matrices")
    r.add_argument("paths", nargs="+", help="confusion_*.json files or directories holding them")
    r.set_defaults(fn=cmd_report)

    x = sub.add_parser("rater-export", parents=[common], help="blinded real/synthetic image set")
    x.add_argument("--real-manifest", required=True)
    x.add_argument("--synth-manifest", required=True)
    x.add_argument("--n-real", type=int, required=True)
    x.add_argument("--n-synth", type=int, required=True)
    x.set_defaults(fn=cmd_rater_export)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    if args.jobs < 1:
        log.error("event=error kind=usage message=%s", json.dumps("--jobs must be >= 1"))
        return EXIT_USAGE
    try:
        args.fn(args, _config(args))
    except (ValidationError, IngestionError, OSError) as exc:
        log.error("event=error kind=validation message=%s", json.dumps(str(exc)))
        return EXIT_VALIDATION
    except LesionAugError as exc:
        log.error("event=error kind=%s message=%s", type(exc).__name__, json.dumps(str(exc)))
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
