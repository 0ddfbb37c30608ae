"""Run configuration: every module config in one document.

Configs are TOML (or JSON) documents with a root ``seed`` and one table per
module::

    seed = 7
    folds = 3
    epsilon = 0.005

    [phantom]       # PhantomConfig fields except seed
    [augmentation]  # AugmentationPlan fields
    [schedule]      # classic = [...], synthetic = [...]
    [classifier]    # ClassifierConfig fields except seed
    [gan]           # GanTrainConfig fields except seed
    [data]          # manifest, image_root, margin_frac (real data instead of the phantom)

All randomness derives from the root seed (see :mod:`lesionaug.seeding`),
so per-module seeds are not configurable.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentationPlan
from .classifier import ClassifierConfig
from .data import DEFAULT_MARGIN
from .dcgan import GanTrainConfig
from .errors import ValidationError
from .experiment.curve import DEFAULT_EPSILON
from .experiment.groups import DataGroupSchedule
from .experiment.runner import ExperimentConfig
from .phantom import PhantomConfig
from .seeding import derive_seed

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class DataConfig:
    manifest: str | None = None
    image_root: str | None = None
    margin_frac: float = DEFAULT_MARGIN


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    folds: int = 3
    epsilon: float = DEFAULT_EPSILON
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    augmentation: AugmentationPlan = field(default_factory=AugmentationPlan)
    schedule: DataGroupSchedule = field(default_factory=DataGroupSchedule)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "folds": self.folds, "epsilon": self.epsilon}
        for name, _ in _SECTIONS.items():
            section = asdict(getattr(self, name))
            section.pop("seed", None)
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out

    def digest(self) -> str:
        """SHA-256 over the canonical JSON of every field."""
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def with_seed(self, seed: int | None) -> "RunConfig":
        return self if seed is None else replace(self, seed=int(seed))

    def phantom_config(self) -> PhantomConfig:
        return replace(self.phantom, seed=derive_seed(self.seed, "phantom"))

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig(
            folds=self.folds,
            plan=self.augmentation,
            schedule=self.schedule,
            classifier=replace(self.classifier, seed=derive_seed(self.seed, "classifier")),
            gan=replace(self.gan, seed=derive_seed(self.seed, "gan")),
            epsilon=self.epsilon,
            seed=self.seed,
        )

    def snapshot(self) -> dict:
        return {"config": self.to_dict(), "config_hash": self.digest(), "seed": self.seed}

    def write_snapshot(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / "config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.snapshot(), sort_keys=True, indent=2) + "\n")
        return path


_SECTIONS = {
    "phantom": PhantomConfig,
    "augmentation": AugmentationPlan,
    "schedule": DataGroupSchedule,
    "classifier": ClassifierConfig,
    "gan": GanTrainConfig,
    "data": DataConfig,
}
_SCALARS = {"seed": int, "folds": int, "epsilon": float}


def from_dict(doc: dict) -> RunConfig:
    """Build a RunConfig; unknown keys and bad values raise ValidationError."""
    if not isinstance(doc, dict):
        raise ValidationError("config document must be a table")
    unknown = set(doc) - set(_SCALARS) - set(_SECTIONS)
    if unknown:
        raise ValidationError(f"unknown config key(s): {sorted(unknown)}")
    kwargs = {}
    for key, cast in _SCALARS.items():
        if key in doc:
            try:
                kwargs[key] = cast(doc[key])
            except (TypeError, ValueError):
                raise ValidationError(f"{key} must be a {cast.__name__}") from None
    for name, cls in _SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ValidationError(f"[{name}] must be a table")
        allowed = {f.name for f in fields(cls)} - {"seed"}
        bad = set(section) - allowed
        if bad:
            raise ValidationError(f"unknown key(s) in [{name}]: {sorted(bad)}")
        values = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
        try:
            kwargs[name] = cls(**values)
        except TypeError as exc:
            raise ValidationError(f"[{name}]: {exc}") from None
    config = RunConfig(**kwargs)
    ExperimentConfig(folds=config.folds, epsilon=config.epsilon)  # range checks
    return config


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ValidationError(f"cannot parse config {path}: {exc}") from None
    return from_dict(doc)


DESK = {
    "seed": 0,
    "phantom": {"separability": 0.7},
    "schedule": {"classic": [63, 500, 2000], "synthetic": [500, 1500]},
    "classifier": {"channels": [8, 16, 32], "hidden": 64, "batch_size": 32, "epochs": 150, "max_steps": 1000},
    "gan": {"width": 32, "batch_size": 32, "epochs": 30, "max_steps": 150, "checkpoint_every": 10},
}


def preset(name: str) -> RunConfig:
    """``default`` (full-scale protocol) or ``desk`` (reduced widths and budgets)."""
    if name == "default":
        return RunConfig()
    if name == "desk":
        return from_dict(DESK)
    raise ValidationError(f"unknown preset {name!r}")
