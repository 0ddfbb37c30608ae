"""Geometric augmentation of lesion ROIs.

Each ROI is rotated ``n_rot`` times; every rotated ROI is emitted as-is and
additionally flipped ``n_flip`` times, translated ``n_trans`` times by at
most ``p = min(4, 0.1 d)`` pixels per axis, and re-cropped ``n_scale`` times
with context margin ``s`` in ``[0.1 d, 0.4 d]``. Everything runs at source
resolution and is resized to 64x64 with bicubic interpolation last.

Translations, margins and diameters are in source pixels. Border pixels
exposed by a transform replicate the nearest edge.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import (
    DEFAULT_MARGIN,
    ROI_SIZE,
    LesionROI,
    Provenance,
    crop_window,
    quantize16,
)
from .errors import CropError, ValidationError
from .resample import sample_points, sample_separable, window_coords
from .seeding import derive_seed

MAX_SHIFT = 4.0
SHIFT_FRAC = 0.1
SCALE_RANGE = (0.1, 0.4)


class FlipMode(str, enum.Enum):
    UD = "UD"
    LR = "LR"
    UDLR = "UDLR"


@dataclass(frozen=True)
class AugmentationPlan:
    n_rot: int = 30
    n_flip: int = 3
    n_trans: int = 7
    n_scale: int = 5

    def __post_init__(self) -> None:
        for name in ("n_rot", "n_flip", "n_trans", "n_scale"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValidationError(f"{name} must be a non-negative integer, got {v!r}")
        if self.n_flip > 3:
            raise ValidationError("n_flip cannot exceed 3 (UD, LR, UDLR)")


def plan_size(plan: AugmentationPlan) -> int:
    return plan.n_rot * (1 + plan.n_flip + plan.n_trans + plan.n_scale)


def translation_bound(diameter_px: float) -> float:
    if not diameter_px > 0:
        raise ValidationError(f"diameter must be positive, got {diameter_px!r}")
    return min(MAX_SHIFT, SHIFT_FRAC * diameter_px)


# -- single transforms --------------------------------------------------------


def _with_pixels(roi: LesionROI, pixels: np.ndarray) -> LesionROI:
    return replace(roi, pixels=np.clip(pixels, 0.0, 1.0))


def rotate_array(pixels: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rotate counter-clockwise (as displayed) about the array centre.

    Multiples of 90 degrees are exact index permutations; other angles use
    bicubic sampling with replicate-edge fill.
    """
    quarter = theta_deg / 90.0
    if quarter == int(quarter) and pixels.shape[0] == pixels.shape[1]:
        return np.rot90(pixels, int(quarter) % 4).copy()
    return _rotate_bicubic(pixels, theta_deg)


def _rotate_bicubic(pixels: np.ndarray, theta_deg: float) -> np.ndarray:
    h, w = pixels.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    y, x = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    src_r = y * c + x * s + cy
    src_c = x * c - y * s + cx
    return sample_points(pixels, src_r, src_c)


def rotate(roi: LesionROI, theta_deg: float) -> LesionROI:
    if not 0.0 <= theta_deg <= 180.0:
        raise ValidationError(f"rotation angle must be in [0, 180], got {theta_deg!r}")
    return _with_pixels(roi, rotate_array(roi.pixels, theta_deg))


def flip_array(pixels: np.ndarray, mode: FlipMode | str) -> np.ndarray:
    mode = FlipMode(mode)
    if mode is FlipMode.UD:
        return pixels[::-1, :].copy()
    if mode is FlipMode.LR:
        return pixels[:, ::-1].copy()
    return pixels[::-1, ::-1].copy()


def flip(roi: LesionROI, mode: FlipMode | str) -> LesionROI:
    return replace(roi, pixels=flip_array(roi.pixels, mode))


def shift_array(pixels: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Move content ``dx`` columns right and ``dy`` rows down."""
    h, w = pixels.shape
    return sample_separable(pixels, np.arange(h) - dy, np.arange(w) - dx)


def translate(roi: LesionROI, dx: float, dy: float) -> LesionROI:
    p = translation_bound(roi.diameter_px)
    if abs(dx) > p or abs(dy) > p:
        raise ValidationError(f"shift ({dx}, {dy}) exceeds bound {p} for diameter {roi.diameter_px}")
    return _with_pixels(roi, shift_array(roi.pixels, dx, dy))


def _check_scale(d: float, s: float) -> None:
    lo, hi = SCALE_RANGE[0] * d, SCALE_RANGE[1] * d
    if not lo - 1e-9 <= s <= hi + 1e-9:
        raise ValidationError(f"context margin s={s} outside [{lo}, {hi}] for d={d}")


def context_window(roi: LesionROI, s: float) -> float:
    """Side, in source pixels, of the window with context margin ``s``."""
    d = roi.source.diameter_px if roi.source is not None else roi.diameter_px
    _check_scale(d, s)
    return d + 2.0 * s


def rescale_context(roi_source: LesionROI, s: float, size: int = ROI_SIZE) -> LesionROI:
    """Re-crop with context margin ``s`` (window side ``d + 2s``) and resize.

    With a source slice the window is cut from the slice and must fit
    inside it. Without one, the ROI is zoomed about its centre and missing
    context replicates the ROI border.
    """
    side = context_window(roi_source, s)
    if roi_source.source is not None:
        src = roi_source.source
        _require_inside(src.pixels, src.center, side)
        pixels = _window(src.pixels, src.center, side, size)
        diameter = src.diameter_px * size / side
    else:
        h, w = roi_source.pixels.shape
        pixels = _window(roi_source.pixels, ((h - 1) / 2.0, (w - 1) / 2.0), side, size)
        diameter = roi_source.diameter_px * size / side
    return replace(roi_source, pixels=pixels, diameter_px=diameter)


def _require_inside(image: np.ndarray, center: tuple[float, float], side: float) -> None:
    h, w = image.shape
    half = side / 2.0
    r, c = center
    if r - half < -0.5 or c - half < -0.5 or r + half > h - 0.5 or c + half > w - 0.5:
        raise CropError(f"context window of side {side:.1f} at {center} exceeds source {image.shape}")


def _window(img: np.ndarray, center: tuple[float, float], side: float, size: int) -> np.ndarray:
    rows = window_coords(center[0], side, size)
    cols = window_coords(center[1], side, size)
    return np.clip(sample_separable(img, rows, cols), 0.0, 1.0)


# -- full procedure -------------------------------------------------------------


@dataclass(frozen=True)
class TransformRecord:
    """Everything needed to regenerate one augmented sample."""

    index: int
    theta: float
    kind: str  # "rot", "flip", "trans" or "scale"
    flip: str | None = None
    dx: float | None = None
    dy: float | None = None
    s: float | None = None

    def as_row(self) -> dict[str, str]:
        def fmt(v):
            return "" if v is None else repr(v)

        return {
            "aug_index": str(self.index),
            "kind": self.kind,
            "theta": repr(self.theta),
            "flip": self.flip or "",
            "dx": fmt(self.dx),
            "dy": fmt(self.dy),
            "s": fmt(self.s),
        }


@dataclass(frozen=True, eq=False)
class AugmentedSample:
    pixels: np.ndarray
    source_id: str
    record: TransformRecord


def lesion_seed(seed: int, lesion_id: str) -> int:
    return derive_seed(seed, "augment", lesion_id)


def _source_view(roi: LesionROI) -> tuple[np.ndarray, tuple[float, float], float, float]:
    """(image, centre, diameter, base window side), all in source pixels."""
    if roi.source is not None:
        src = roi.source
        side = src.diameter_px * (1.0 + 2.0 * DEFAULT_MARGIN)
        return src.pixels, src.center, src.diameter_px, side
    h, w = roi.pixels.shape
    return roi.pixels, ((h - 1) / 2.0, (w - 1) / 2.0), roi.diameter_px, float(h)


def draw_transforms(roi: LesionROI, plan: AugmentationPlan, seed: int) -> list[TransformRecord]:
    """Draw the random parameters for every sample of ``plan``.

    Cheap; pixel rendering is deferred to :func:`render`.
    """
    rng = np.random.default_rng(lesion_seed(seed, roi.lesion_id))
    _, _, d, _ = _source_view(roi)
    p = translation_bound(d)
    lo, hi = SCALE_RANGE[0] * d, SCALE_RANGE[1] * d
    modes = list(FlipMode)
    records: list[TransformRecord] = []
    for _ in range(plan.n_rot):
        theta = float(rng.uniform(0.0, 180.0))
        records.append(TransformRecord(len(records), theta, "rot"))
        picked = rng.permutation(len(modes))[: plan.n_flip]
        for m in sorted(picked):
            records.append(TransformRecord(len(records), theta, "flip", flip=modes[m].value))
        for _ in range(plan.n_trans):
            while True:
                dx, dy = (float(v) for v in rng.uniform(-p, p, size=2))
                if (dx, dy) != (0.0, 0.0) and abs(dx) < p and abs(dy) < p:
                    break
            records.append(TransformRecord(len(records), theta, "trans", dx=dx, dy=dy))
        for _ in range(plan.n_scale):
            records.append(TransformRecord(len(records), theta, "scale", s=float(rng.uniform(lo, hi))))
    return records


def render(roi: LesionROI, record: TransformRecord, size: int = ROI_SIZE) -> np.ndarray:
    """Produce the pixels of one augmented sample."""
    image, center, d, side = _source_view(roi)
    if record.kind == "scale":
        _check_scale(d, record.s)
        side = d + 2.0 * record.s
    shift = translation_bound(d) if record.kind == "trans" else 0.0
    if roi.source is not None and record.kind == "scale":
        _require_inside(image, center, side)
    # Work on an integer crop large enough that rotation and shifting never
    # pull replicated border pixels into the visible window.
    work = int(math.ceil(side * math.sqrt(2.0) + 2.0 * shift)) + 4
    if roi.source is None:
        h, w = image.shape
        pad = max(0, math.ceil((work - min(h, w)) / 2))
        crop = np.pad(image, pad, mode="edge") if pad else image
        c = (center[0] + pad, center[1] + pad)
    else:
        crop = crop_window(image, center, work, pad=True)
        top = math.floor(center[0] - (work - 1) / 2.0 + 0.5)
        left = math.floor(center[1] - (work - 1) / 2.0 + 0.5)
        c = (center[0] - top, center[1] - left)

    if _centred(crop, c):
        work_img = rotate_array(crop, record.theta)
    else:
        work_img = _rotate_about(crop, record.theta, c)
    if record.kind == "flip":
        work_img = flip_array(work_img, record.flip)
        hh, ww = work_img.shape
        if record.flip in ("UD", "UDLR"):
            c = (hh - 1 - c[0], c[1])
        if record.flip in ("LR", "UDLR"):
            c = (c[0], ww - 1 - c[1])
    elif record.kind == "trans":
        work_img = shift_array(work_img, record.dx, record.dy)
    out = _window(work_img, c, side, size)
    return quantize16(out)


def _centred(img: np.ndarray, c: tuple[float, float]) -> bool:
    h, w = img.shape
    return c == ((h - 1) / 2.0, (w - 1) / 2.0)


def _rotate_about(img: np.ndarray, theta_deg: float, c: tuple[float, float]) -> np.ndarray:
    if theta_deg == 0.0:
        return img.copy()
    h, w = img.shape
    y, x = np.meshgrid(np.arange(h) - c[0], np.arange(w) - c[1], indexing="ij")
    t = math.radians(theta_deg)
    cs, sn = math.cos(t), math.sin(t)
    return np.clip(sample_points(img, y * cs + x * sn + c[0], x * cs - y * sn + c[1]), 0.0, 1.0)


def to_roi(roi: LesionROI, sample: AugmentedSample, size: int = ROI_SIZE) -> LesionROI:
    _, _, d, side = _source_view(roi)
    rec = sample.record
    if rec.kind == "scale":
        side = d + 2.0 * rec.s
    return LesionROI(
        pixels=sample.pixels,
        diameter_px=d * size / side,
        label=roi.label,
        patient_id=roi.patient_id,
        lesion_id=f"{roi.lesion_id}#aug{rec.index}",
        provenance=Provenance.CLASSIC_AUG,
        origin=roi.lesion_id,
        aug_index=rec.index,
        lineage=roi.lineage,
    )


def augment(roi: LesionROI, plan: AugmentationPlan, seed: int) -> list[AugmentedSample]:
    """Expand one ROI into ``plan_size(plan)`` 64x64 samples."""
    return [
        AugmentedSample(render(roi, rec), roi.lesion_id, rec)
        for rec in draw_transforms(roi, plan, seed)
    ]


def augment_many(
    rois: Sequence[LesionROI], plan: AugmentationPlan, seed: int, jobs: int = 1
) -> list[list[AugmentedSample]]:
    """Augment a batch of lesions; the result does not depend on ``jobs``."""
    if jobs <= 1:
        return [augment(r, plan, seed) for r in rois]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(augment, rois, [plan] * len(rois), [seed] * len(rois)))
