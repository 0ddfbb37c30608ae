"""Core domain types, manifest ingestion, ROI cropping and bicubic resizing.

Pixels are stored in ``[0, 1]``. A :class:`LesionROI` keeps an optional
reference to the full slice it was cropped from so that augmentation can
re-crop with a different amount of context.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import CropError, IngestionError, ResizeError, ValidationError
from .resample import sample_separable, window_coords

ROI_SIZE = 64
DEFAULT_MARGIN = 0.25
MANIFEST_FIELDS = (
    "image_path",
    "label",
    "patient_id",
    "lesion_id",
    "diameter_px",
    "center_row",
    "center_col",
)


class LesionClass(enum.IntEnum):
    CYST = 0
    METASTASIS = 1
    HEMANGIOMA = 2

    @property
    def display(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> "LesionClass":
        key = str(text).strip().upper()
        try:
            return cls[key]
        except KeyError:
            raise ValidationError(
                f"unknown lesion class {text!r}; expected one of "
                f"{[c.display for c in cls]}"
            ) from None


class Provenance(str, enum.Enum):
    REAL = "Real"
    CLASSIC_AUG = "ClassicAug"
    SYNTHETIC = "Synthetic"


@dataclass(frozen=True, eq=False)
class SourceImage:
    """A full grayscale slice and the lesion location inside it."""

    pixels: np.ndarray
    center: tuple[float, float]
    diameter_px: float


@dataclass(frozen=True, eq=False)
class LesionROI:
    """One grayscale lesion crop.

    ``diameter_px`` is measured in this ROI's own pixel grid. ``origin`` is
    the source lesion_id for classic augmentations and the generator
    checkpoint id for synthetic samples. ``lineage`` lists every real
    lesion_id whose pixels influenced this item; the leakage guard relies
    on it.
    """

    pixels: np.ndarray
    diameter_px: float
    label: LesionClass
    patient_id: str
    lesion_id: str
    provenance: Provenance = Provenance.REAL
    origin: str | None = None
    aug_index: int | None = None
    source: SourceImage | None = field(default=None, repr=False)
    lineage: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or min(px.shape) < 1:
            raise ValidationError(f"ROI {self.lesion_id!r}: pixels must be a non-empty 2-D array")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError(f"ROI {self.lesion_id!r}: pixels must be finite and in [0, 1]")
        if not (self.diameter_px > 0 and math.isfinite(self.diameter_px)):
            raise ValidationError(f"ROI {self.lesion_id!r}: diameter_px must be positive")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "label", LesionClass(self.label))
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if self.provenance is Provenance.CLASSIC_AUG and not self.origin:
            raise ValidationError("ClassicAug items must name their source lesion_id")
        if self.provenance is Provenance.SYNTHETIC and not self.origin:
            raise ValidationError("Synthetic items must name their generator checkpoint")
        if not self.lineage and self.provenance is Provenance.REAL:
            object.__setattr__(self, "lineage", frozenset({self.lesion_id}))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def key(self) -> tuple[str, str, int | None]:
        return (self.lesion_id, self.provenance.value, self.aug_index)


@dataclass(frozen=True, eq=False)
class Dataset:
    items: tuple[LesionROI, ...]
    name: str = "dataset"

    def __post_init__(self) -> None:
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        keys = Counter(item.key for item in items)
        dupes = [k for k, n in keys.items() if n > 1]
        if dupes:
            raise ValidationError(f"{self.name}: duplicate items {dupes[:3]}")
        real = Counter(i.lesion_id for i in items if i.provenance is Provenance.REAL)
        clash = [k for k, n in real.items() if n > 1]
        if clash:
            raise ValidationError(f"{self.name}: duplicate real lesion_id {clash[:3]}")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[LesionROI]:
        return iter(self.items)

    def __getitem__(self, i: int) -> LesionROI:
        return self.items[i]

    def class_counts(self) -> dict[LesionClass, int]:
        counts = Counter(item.label for item in self.items)
        return {c: counts.get(c, 0) for c in LesionClass}

    def of_class(self, label: LesionClass) -> "Dataset":
        return Dataset(tuple(i for i in self.items if i.label == label), f"{self.name}[{label.display}]")

    def patients(self) -> list[str]:
        return sorted({i.patient_id for i in self.items})

    def arrays(self, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
        """Stack pixels to ``(N, 1, H, W)`` plus an int label vector."""
        if not self.items:
            return np.zeros((0, 1, ROI_SIZE, ROI_SIZE), dtype), np.zeros(0, np.int64)
        x = np.stack([i.pixels for i in self.items]).astype(dtype)[:, None]
        y = np.array([int(i.label) for i in self.items], dtype=np.int64)
        return x, y


def merge(datasets: Iterable[Dataset], name: str = "merged") -> Dataset:
    items: list[LesionROI] = []
    for ds in datasets:
        items.extend(ds.items)
    return Dataset(tuple(items), name)


def crop_window(
    image: np.ndarray, center: tuple[float, float], side: int, pad: bool = False
) -> np.ndarray:
    """Integer square crop of ``side`` pixels centred as closely as possible on ``center``.

    Raises CropError if the window leaves the image, unless ``pad`` is set,
    in which case missing pixels replicate the nearest edge.
    """
    image = np.asarray(image)
    h, w = image.shape
    top = math.floor(center[0] - (side - 1) / 2.0 + 0.5)
    left = math.floor(center[1] - (side - 1) / 2.0 + 0.5)
    bottom, right = top + side, left + side
    inside = top >= 0 and left >= 0 and bottom <= h and right <= w
    if inside:
        return image[top:bottom, left:right].copy()
    if not pad:
        raise CropError(
            f"crop window rows [{top}, {bottom}) x cols [{left}, {right}) "
            f"exceeds image of shape {image.shape}"
        )
    pads = ((max(0, -top), max(0, bottom - h)), (max(0, -left), max(0, right - w)))
    padded = np.pad(image, pads, mode="edge")
    top += pads[0][0]
    left += pads[1][0]
    return padded[top : top + side, left : left + side].copy()


def crop_roi(
    image: np.ndarray,
    center: tuple[float, float],
    diameter_px: float,
    margin_frac: float = DEFAULT_MARGIN,
    *,
    label: LesionClass,
    patient_id: str = "",
    lesion_id: str = "",
    pad: bool = False,
) -> LesionROI:
    """Crop a square ROI of side ``diameter_px * (1 + 2 * margin_frac)``.

    The result stays at source resolution and remembers the full image.
    """
    if not diameter_px > 0:
        raise ValidationError("diameter_px must be positive")
    if not 0.0 <= margin_frac <= 1.0:
        raise ValidationError("margin_frac must lie in [0, 1]")
    image = np.asarray(image, dtype=np.float64)
    side = max(2, int(round(diameter_px * (1.0 + 2.0 * margin_frac))))
    pixels = crop_window(image, center, side, pad=pad)
    return LesionROI(
        pixels=pixels,
        diameter_px=float(diameter_px),
        label=label,
        patient_id=patient_id,
        lesion_id=lesion_id,
        source=SourceImage(image, (float(center[0]), float(center[1])), float(diameter_px)),
    )


def resize_bicubic(roi: np.ndarray, target: int = ROI_SIZE) -> np.ndarray:
    """Resize a 2-D array to ``target x target`` with Catmull-Rom bicubic.

    Output values are clamped to ``[0, 1]``.
    """
    roi = np.asarray(roi, dtype=np.float64)
    if roi.ndim != 2 or min(roi.shape) < 2:
        raise ResizeError(f"cannot resize array of shape {roi.shape}; each side must be >= 2")
    if target < 1:
        raise ResizeError("target size must be positive")
    h, w = roi.shape
    rows = window_coords((h - 1) / 2.0, h, target)
    cols = window_coords((w - 1) / 2.0, w, target)
    return np.clip(sample_separable(roi, rows, cols), 0.0, 1.0)


def canonical(roi: LesionROI, size: int = ROI_SIZE) -> LesionROI:
    """Resize an ROI to ``size x size``, rescaling its diameter accordingly."""
    if roi.height == size and roi.width == size:
        return roi
    scale = size / roi.height
    return replace(roi, pixels=resize_bicubic(roi.pixels, size), diameter_px=roi.diameter_px * scale)


# -- disk I/O ---------------------------------------------------------------


def read_gray_png(path: Path) -> np.ndarray:
    """Read an 8- or 16-bit grayscale image into ``[0, 1]``."""
    with Image.open(path) as im:
        mode = im.mode
        if mode == "L":
            return np.asarray(im, dtype=np.float64) / 255.0
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im).astype(np.float64)
            if arr.max(initial=0) > 65535 or arr.min(initial=0) < 0:
                raise ValidationError(f"{path}: pixel values outside 16-bit range")
            return arr / 65535.0
    raise ValidationError(f"{path}: expected a grayscale image, got mode {mode!r}")


def write_gray_png(path: Path, pixels: np.ndarray, bits: int = 16) -> None:
    px = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    path.parent.mkdir(parents=True, exist_ok=True)
    if bits == 8:
        Image.fromarray(np.round(px * 255.0).astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray(np.round(px * 65535.0).astype(np.uint16)).save(path)


def quantize16(pixels: np.ndarray) -> np.ndarray:
    """Snap values onto the 16-bit storage grid so disk round-trips are exact."""
    return np.round(np.clip(pixels, 0.0, 1.0) * 65535.0) / 65535.0


# Optional columns; manifests without them load as real lesions.
PROVENANCE_FIELDS = ("provenance", "origin", "aug_index", "lineage")


def _row_error(row_no: int, msg: str) -> IngestionError:
    return IngestionError(f"manifest row {row_no}: {msg}")


def load_dataset(
    manifest_path: str | Path,
    image_root: str | Path,
    *,
    margin_frac: float = DEFAULT_MARGIN,
    size: int = ROI_SIZE,
    name: str | None = None,
) -> Dataset:
    """Load a Dataset of canonical ``size x size`` ROIs from a CSV manifest.

    Rows with blank ``center_row``/``center_col`` treat the whole image as
    the ROI. Otherwise the image is the full slice; the ROI is cropped
    around the centre and the slice is kept for context rescaling.
    """
    manifest_path = Path(manifest_path)
    image_root = Path(image_root)
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in MANIFEST_FIELDS if f not in (reader.fieldnames or MANIFEST_FIELDS)]
        if missing:
            raise ValidationError(f"{manifest_path}: manifest lacks columns {missing}")
        rows = list(reader)

    items = []
    for row_no, row in enumerate(rows, start=2):
        label = LesionClass.parse(row["label"])
        path = image_root / row["image_path"]
        if not path.is_file():
            raise _row_error(row_no, f"image {path} not found")
        try:
            image = read_gray_png(path)
        except OSError as exc:
            raise _row_error(row_no, f"cannot read {path}: {exc}") from exc
        try:
            diameter = float(row["diameter_px"])
        except ValueError:
            raise _row_error(row_no, f"bad diameter {row['diameter_px']!r}") from None
        meta = dict(label=label, patient_id=row["patient_id"], lesion_id=row["lesion_id"])
        try:
            prov = _provenance_meta(row)
        except ValueError as exc:
            raise _row_error(row_no, str(exc)) from None
        if row["center_row"].strip() and row["center_col"].strip():
            center = (float(row["center_row"]), float(row["center_col"]))
            roi = crop_roi(image, center, diameter, margin_frac, **meta)
            roi = replace(roi, **prov) if prov else roi
        else:
            roi = LesionROI(pixels=image, diameter_px=diameter, **meta, **prov)
        items.append(canonical(roi, size))
    return Dataset(tuple(items), name or manifest_path.stem)


def _provenance_meta(row: dict) -> dict:
    prov = (row.get("provenance") or "").strip()
    if not prov:
        return {}
    meta = {"provenance": Provenance(prov), "origin": row.get("origin") or None}
    if (row.get("aug_index") or "").strip():
        meta["aug_index"] = int(row["aug_index"])
    if (row.get("lineage") or "").strip():
        meta["lineage"] = frozenset(row["lineage"].split(";"))
    return meta


def save_dataset(
    dataset: Dataset,
    out_dir: str | Path,
    manifest_name: str = "manifest.csv",
    extra: Sequence[dict[str, str]] | None = None,
) -> Path:
    """Write PNGs (16-bit) and a manifest that :func:`load_dataset` reads back.

    Items with a source slice are written as the full slice plus centre; the
    rest are written as-is with blank centre columns. ``extra`` holds one
    dict of additional columns per item (same keys for every item).
    """
    if extra is not None and len(extra) != len(dataset):
        raise ValidationError("extra columns must have one entry per item")
    extra_fields = list(extra[0]) if extra else []
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / manifest_name
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS + PROVENANCE_FIELDS + tuple(extra_fields))
        for n, item in enumerate(dataset):
            fname = f"{n:05d}_{_safe(item.lesion_id)}.png"
            if item.source is not None:
                src = item.source
                write_gray_png(img_dir / fname, src.pixels)
                row = [src.diameter_px, repr(src.center[0]), repr(src.center[1])]
            else:
                write_gray_png(img_dir / fname, item.pixels)
                row = [item.diameter_px, "", ""]
            prov = [
                item.provenance.value,
                item.origin or "",
                "" if item.aug_index is None else str(item.aug_index),
                ";".join(sorted(item.lineage)),
            ]
            more = [extra[n][f] for f in extra_fields] if extra else []
            writer.writerow(
                [f"images/{fname}", item.label.display, item.patient_id, item.lesion_id]
                + [repr(float(row[0]))]
                + row[1:]
                + prov
                + more
            )
    return manifest


def _safe(text: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in text)


def require_real(items: Sequence[LesionROI], what: str = "test set") -> None:
    bad = [i.lesion_id for i in items if i.provenance is not Provenance.REAL]
    if bad:
        raise ValidationError(f"{what} must contain only real items; found {bad[:3]}")
