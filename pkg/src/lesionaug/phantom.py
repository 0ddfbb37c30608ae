"""Procedural lesion phantoms with three visually distinct classes.

Each lesion is drawn on its own slice of smoothed-noise parenchyma. A lesion
is a star-shaped region ``r < R(phi)`` with ``R`` a sum of angular harmonics
around ``d / 2``, a soft edge, interior texture and an optional rim.

Class archetypes (values at ``separability = 1``)::

    parameter            cyst        metastasis    hemangioma
    contrast             -0.16       -0.10         -0.04
    edge width (x d)      0.01        0.10          0.04
    texture amplitude     0.01        0.08          0.04
    texture scale (x d)   0.05        0.04          0.10
    irregularity          0.03        0.18          0.12
    harmonic weights     k=2,3       k=2..5        k=4..6
    rim amplitude         0.00       -0.03         +0.06

Every class parameter is ``neutral + separability * (archetype - neutral)``
where ``neutral`` is the mean of the three archetypes, so at separability 0
all classes share one generative distribution. Per-lesion variability is
identical across classes: multiplicative jitter ``N(1, 0.3)`` on every
shape/texture parameter, additive contrast jitter ``N(0, 0.1)``, background
level ``U(0.45, 0.6)`` and background amplitude ``0.06``. The drawn lesion is
offset from its recorded centre by up to ``0.15 d`` per axis and its true
diameter differs from the recorded one by up to 15%, mimicking imprecise
annotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import DEFAULT_MARGIN, Dataset, LesionClass, canonical, crop_roi, quantize16
from .errors import ValidationError
from .seeding import derive_seed

HARMONICS = np.arange(2, 7)

ARCHETYPES = {
    LesionClass.CYST: dict(
        contrast=-0.16, edge=0.01, tex_amp=0.01, tex_scale=0.05, irregularity=0.03,
        harmonics=(1, 1, 0, 0, 0), rim=0.0,
    ),
    LesionClass.METASTASIS: dict(
        contrast=-0.10, edge=0.10, tex_amp=0.08, tex_scale=0.04, irregularity=0.18,
        harmonics=(1, 1, 1, 1, 0), rim=-0.03,
    ),
    LesionClass.HEMANGIOMA: dict(
        contrast=-0.04, edge=0.04, tex_amp=0.04, tex_scale=0.10, irregularity=0.12,
        harmonics=(0, 0, 1, 1, 1), rim=0.06,
    ),
}
RIM_WIDTH = 0.06
JITTER = 0.3
CONTRAST_JITTER = 0.1
BACKGROUND_LEVEL = (0.45, 0.6)
BACKGROUND_AMPLITUDE = 0.06
CENTER_JITTER = 0.15  # annotation offset as a fraction of d
DIAMETER_ERROR = 0.15  # relative error of the recorded diameter
BACKGROUND_SCALE = 0.15  # smoothing sigma as a fraction of d


@dataclass(frozen=True)
class PhantomConfig:
    n_per_class: tuple[int, int, int] = (53, 64, 65)
    diameter_range: tuple[float, float] = (10.0, 102.0)
    separability: float = 1.0
    lesions_per_patient: float = 1.5
    background_amplitude: float = BACKGROUND_AMPLITUDE
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_per_class", tuple(int(n) for n in self.n_per_class))
        object.__setattr__(self, "diameter_range", tuple(float(d) for d in self.diameter_range))
        if len(self.n_per_class) != 3 or min(self.n_per_class) < 0:
            raise ValidationError("n_per_class needs three non-negative counts")
        lo, hi = self.diameter_range
        if not 0 < lo <= hi:
            raise ValidationError("diameter range must be positive and ordered")
        if not 0.0 <= self.separability <= 1.0:
            raise ValidationError("separability must lie in [0, 1]")
        if self.lesions_per_patient < 1.0:
            raise ValidationError("lesions_per_patient must be >= 1")


def class_parameters(label: LesionClass, separability: float) -> dict:
    """Generative parameters of one class at the given separability."""
    out = {}
    for key in ARCHETYPES[label]:
        vals = np.array([np.asarray(ARCHETYPES[c][key], dtype=float) for c in LesionClass])
        neutral = vals.mean(axis=0)
        out[key] = neutral + separability * (vals[int(label)] - neutral)
    return out


@dataclass(frozen=True, eq=False)
class RenderedLesion:
    image: np.ndarray
    mask: np.ndarray
    center: tuple[float, float]
    diameter_px: float


def _smooth_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    field = gaussian_filter(rng.standard_normal(shape), max(sigma, 0.5), mode="wrap")
    return field / (field.std() + 1e-12)


def render_lesion(label: LesionClass, diameter: float, separability: float, rng: np.random.Generator,
                  background_amplitude: float = BACKGROUND_AMPLITUDE) -> RenderedLesion:
    p = class_parameters(label, separability)
    jit = lambda: max(0.0, rng.normal(1.0, JITTER))  # noqa: E731
    # room for the widest context window around an overstated recorded diameter
    side = int(math.ceil(2.0 * diameter / (1.0 - DIAMETER_ERROR))) + 12
    c = (side - 1) / 2.0
    oy, ox = rng.uniform(-CENTER_JITTER, CENTER_JITTER, size=2) * diameter
    yy, xx = np.meshgrid(np.arange(side) - c - oy, np.arange(side) - c - ox, indexing="ij")
    r = np.hypot(yy, xx)
    phi = np.arctan2(yy, xx)

    weights = np.asarray(p["harmonics"], dtype=float)
    weights = weights / max(weights.sum(), 1e-12)
    amps = p["irregularity"] * jit() * weights * rng.uniform(0.5, 1.5, size=len(HARMONICS))
    phases = rng.uniform(0, 2 * np.pi, size=len(HARMONICS))
    radius = 0.5 * diameter * (1.0 + sum(a * np.cos(k * phi + ph) for a, k, ph in zip(amps, HARMONICS, phases)))

    edge = max(0.35, p["edge"] * jit() * diameter)
    inside = 1.0 / (1.0 + np.exp(-np.clip((radius - r) / edge, -50, 50)))
    mask = r < radius

    level = rng.uniform(*BACKGROUND_LEVEL)
    background = level + background_amplitude * _smooth_noise(rng, (side, side), BACKGROUND_SCALE * diameter)
    texture = p["tex_amp"] * jit() * _smooth_noise(rng, (side, side), p["tex_scale"] * jit() * diameter)
    contrast = p["contrast"] * jit() + rng.normal(0.0, CONTRAST_JITTER)
    rim_w = max(0.7, RIM_WIDTH * diameter)
    rim = p["rim"] * jit() * np.exp(-(((r - radius) / rim_w) ** 2))

    image = background + inside * (contrast + texture) + rim
    return RenderedLesion(quantize16(np.clip(image, 0.0, 1.0)), mask, (c, c), float(diameter))


def generate_phantom_dataset(config: PhantomConfig, name: str = "phantom") -> Dataset:
    """Deterministic phantom Dataset of canonical 64x64 ROIs with source slices."""
    items = []
    for label, count in zip(LesionClass, config.n_per_class):
        n_patients = max(1, int(round(count / config.lesions_per_patient))) if count else 0
        prng = np.random.default_rng(derive_seed(config.seed, "patients", label.name))
        # Every patient gets at least one lesion; the remainder are spread at random.
        owners = list(range(n_patients)) + list(prng.integers(0, n_patients, size=count - n_patients)) if count else []
        owners = [int(o) for o in prng.permutation(owners)] if owners else []
        for i in range(count):
            lesion_id = f"{label.name[:3].lower()}{i:03d}"
            rng = np.random.default_rng(derive_seed(config.seed, "lesion", lesion_id))
            d = float(rng.uniform(*config.diameter_range))
            true_d = d * float(rng.uniform(1.0 - DIAMETER_ERROR, 1.0 + DIAMETER_ERROR))
            lesion = render_lesion(label, true_d, config.separability, rng, config.background_amplitude)
            roi = crop_roi(
                lesion.image,
                lesion.center,
                d,
                DEFAULT_MARGIN,
                label=label,
                patient_id=f"{label.name[:3].lower()}-p{owners[i]:03d}",
                lesion_id=lesion_id,
            )
            items.append(canonical(roi))
    return Dataset(tuple(items), name)
