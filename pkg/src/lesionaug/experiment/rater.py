"""Blinded real-versus-synthetic image sets for visual assessment."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..data import Dataset, LesionROI, Provenance, write_gray_png
from ..errors import ValidationError
from ..seeding import derive_seed

KEY_FIELDS = ("file", "class", "provenance", "lesion_id")


@dataclass(frozen=True)
class RaterExport:
    image_dir: Path
    key_path: Path
    names: tuple[str, ...]


def _pick(pool: Dataset, n: int, rng: np.random.Generator, what: str) -> list[LesionROI]:
    if n < 0:
        raise ValidationError(f"negative {what} count")
    if n > len(pool):
        raise ValidationError(f"requested {n} {what} images but only {len(pool)} are available")
    return [pool[int(i)] for i in np.sort(rng.choice(len(pool), size=n, replace=False))]


def export_rater_set(
    real: Dataset, synth: Dataset, n_real: int, n_synth: int, seed: int, out_dir: str | Path
) -> RaterExport:
    """Write a shuffled mix of real and synthetic ROIs under opaque names.

    Images go to ``out_dir/images``; ``out_dir/key.csv`` maps each file to
    its class and provenance and must be withheld from raters.
    """
    if any(i.provenance is Provenance.SYNTHETIC for i in real):
        raise ValidationError("real pool contains synthetic items")
    if any(i.provenance is not Provenance.SYNTHETIC for i in synth):
        raise ValidationError("synthetic pool contains non-synthetic items")
    rng = np.random.default_rng(derive_seed(seed, "rater"))
    items = _pick(real, n_real, rng, "real") + _pick(synth, n_synth, rng, "synthetic")
    items = [items[int(i)] for i in rng.permutation(len(items))]
    names: list[str] = []
    seen = set()
    while len(names) < len(items):
        name = f"{int(rng.integers(0, 2**48)):012x}.png"
        if name not in seen:
            seen.add(name)
            names.append(name)

    out = Path(out_dir)
    image_dir = out / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    key_path = out / "key.csv"
    with open(key_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KEY_FIELDS)
        for name, item in zip(names, items):
            write_gray_png(image_dir / name, item.pixels)
            w.writerow([name, item.label.display, item.provenance.value, item.lesion_id])
    return RaterExport(image_dir, key_path, tuple(names))
