"""Per-class DCGAN: generator, discriminator, adversarial training, synthesis.

Generator: 100-d latent -> dense -> 4x4xC0 -> four 5x5 stride-2 transposed
convolutions (C0 -> C1 -> C2 -> C3 -> 1) -> tanh, 64x64x1 in ``[-1, 1]``.
Discriminator: four 5x5 stride-2 convolutions (1 -> C3 -> C2 -> C1 -> C0)
-> dense -> one logit. Batch normalisation follows every generator layer but
the output and every discriminator layer but the input; the discriminator
uses leaky ReLU (0.2), the generator ReLU.

The full-size channel chain is (1024, 512, 256, 128); ``width`` divides it
for desk-scale runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import DEFAULT_MARGIN, ROI_SIZE, Dataset, LesionClass, LesionROI, Provenance, quantize16
from .errors import ShapeError, TrainingError, ValidationError
from .nn import functional as F
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import (
    BatchNorm2D,
    Conv2D,
    ConvTranspose2D,
    Dense,
    Flatten,
    LeakyReLU,
    ReLU,
    Reshape,
    Sequential,
    Tanh,
)
from .nn.optim import Adam
from .seeding import derive_seed

log = logging.getLogger(__name__)

LATENT_DIM = 100
FULL_CHANNELS = (1024, 512, 256, 128)
BASE = 4
KERNEL = 5
INIT_STD = 0.02
SYNTH_DIAMETER = ROI_SIZE / (1.0 + 2.0 * DEFAULT_MARGIN)


@dataclass(frozen=True)
class GanArchitecture:
    channels: tuple[int, ...] = FULL_CHANNELS
    latent_dim: int = LATENT_DIM

    def __post_init__(self) -> None:
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 4 or min(self.channels) < 1:
            raise ValidationError("DCGAN needs four positive channel widths")

    @classmethod
    def scaled(cls, width: int) -> "GanArchitecture":
        """Full-size chain divided by ``width`` (e.g. 32 gives 32/16/8/4)."""
        return cls(tuple(max(1, c // width) for c in FULL_CHANNELS))


@dataclass(frozen=True)
class GanTrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 10
    latent: str = "uniform"
    d_steps: int = 1
    width: int = 1
    max_steps: int | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ValidationError("GAN batch size must be >= 2 (batch normalisation)")
        if self.latent not in ("uniform", "normal"):
            raise ValidationError(f"latent prior must be 'uniform' or 'normal', got {self.latent!r}")
        if self.epochs < 0 or self.d_steps < 1 or self.width < 1:
            raise ValidationError("epochs >= 0, d_steps >= 1 and width >= 1 required")

    @property
    def architecture(self) -> GanArchitecture:
        return GanArchitecture.scaled(self.width)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def build_generator(arch: GanArchitecture, rng: np.random.Generator, dtype=np.float32) -> Sequential:
    c0, c1, c2, c3 = arch.channels
    layers = [
        ("fc", Dense(arch.latent_dim, BASE * BASE * c0, rng=rng, std=INIT_STD)),
        ("reshape", Reshape(c0, BASE, BASE)),
        ("bn0", BatchNorm2D(c0, rng=rng, gamma_std=INIT_STD)),
        ("relu0", ReLU()),
    ]
    chain = [(c0, c1), (c1, c2), (c2, c3)]
    for i, (a, b) in enumerate(chain, start=1):
        layers += [
            (f"deconv{i}", ConvTranspose2D(a, b, KERNEL, 2, 2, 1, rng=rng, std=INIT_STD)),
            (f"bn{i}", BatchNorm2D(b, rng=rng, gamma_std=INIT_STD)),
            (f"relu{i}", ReLU()),
        ]
    layers += [("deconv4", ConvTranspose2D(c3, 1, KERNEL, 2, 2, 1, rng=rng, std=INIT_STD)), ("tanh", Tanh())]
    return Sequential(layers).astype(dtype)


def build_discriminator(arch: GanArchitecture, rng: np.random.Generator, dtype=np.float32) -> Sequential:
    c0, c1, c2, c3 = arch.channels
    layers = [
        ("conv1", Conv2D(1, c3, KERNEL, 2, 2, rng=rng, std=INIT_STD)),
        ("lrelu1", LeakyReLU(0.2)),
    ]
    for i, (a, b) in enumerate([(c3, c2), (c2, c1), (c1, c0)], start=2):
        layers += [
            (f"conv{i}", Conv2D(a, b, KERNEL, 2, 2, rng=rng, std=INIT_STD)),
            (f"bn{i}", BatchNorm2D(b, rng=rng, gamma_std=INIT_STD)),
            (f"lrelu{i}", LeakyReLU(0.2)),
        ]
    layers += [("flatten", Flatten()), ("fc", Dense(BASE * BASE * c0, 1, rng=rng, std=INIT_STD))]
    return Sequential(layers).astype(dtype)


def sample_latent(rng: np.random.Generator, n: int, prior: str = "uniform", dim: int = LATENT_DIM) -> np.ndarray:
    if prior == "uniform":
        return rng.uniform(-1.0, 1.0, size=(n, dim)).astype(np.float32)
    return rng.standard_normal((n, dim)).astype(np.float32)


def generator_forward(gen: Sequential, z: np.ndarray, train: bool = False) -> np.ndarray:
    z = np.asarray(z, dtype=np.float32)
    fc = gen.layers[0][1]
    if z.ndim != 2 or z.shape[1] != fc.params["w"].shape[0]:
        raise ShapeError(f"latent batch must be (N, {fc.params['w'].shape[0]}), got {z.shape}")
    return gen.forward(z, train)


def discriminator_logits(disc: Sequential, x: np.ndarray, train: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4 or x.shape[1:] != (1, ROI_SIZE, ROI_SIZE):
        raise ShapeError(f"discriminator expects (N, 1, {ROI_SIZE}, {ROI_SIZE}), got {x.shape}")
    return disc.forward(x, train)[:, 0]


def discriminator_forward(disc: Sequential, x: np.ndarray, train: bool = False) -> np.ndarray:
    """Probability that each image is real."""
    return F.sigmoid(discriminator_logits(disc, x, train).astype(np.float64))[0]


@dataclass
class Gan:
    """Generator/discriminator pair with their optimisers."""

    generator: Sequential
    discriminator: Sequential
    config: GanTrainConfig
    label: LesionClass | None = None
    opt_g: Adam = field(init=False)
    opt_d: Adam = field(init=False)

    def __post_init__(self) -> None:
        c = self.config
        self.opt_g = Adam(self.generator, c.lr, c.beta1, c.beta2)
        self.opt_d = Adam(self.discriminator, c.lr, c.beta1, c.beta2)


def build_gan(config: GanTrainConfig, label: LesionClass | None = None) -> Gan:
    rng = np.random.default_rng(derive_seed(config.seed, "gan-init", label.name if label is not None else "-"))
    arch = config.architecture
    return Gan(build_generator(arch, rng), build_discriminator(arch, rng), config, label)


@dataclass(frozen=True)
class StepLosses:
    d_loss: float
    g_loss: float


def _backward_logits(disc: Sequential, logits_grad: np.ndarray) -> np.ndarray:
    return disc.backward(logits_grad[:, None].astype(np.float32))


def gan_train_step(gan: Gan, real_batch: np.ndarray, rng: np.random.Generator) -> StepLosses:
    """One discriminator update (repeated ``d_steps`` times) then one generator update.

    ``real_batch`` is ``(N, 1, 64, 64)`` in ``[-1, 1]``. The discriminator
    minimises ``bce(D(x), 1) + bce(D(G(z)), 0)``; the generator minimises the
    non-saturating ``bce(D(G(z)), 1)``. Running statistics of the network
    that is not being updated are frozen during each sub-step.
    """
    gen, disc, cfg = gan.generator, gan.discriminator, gan.config
    real = np.asarray(real_batch, dtype=np.float32)
    n = real.shape[0]
    if n < 2:
        raise ValidationError("GAN step needs at least 2 real images")
    if real.min() < -1.0 - 1e-6 or real.max() > 1.0 + 1e-6:
        raise ValidationError("real batch must be mapped to [-1, 1]")

    gen.set_stats_update(False)
    disc.set_stats_update(True)
    for _ in range(cfg.d_steps):
        fake = generator_forward(gen, sample_latent(rng, n, cfg.latent), train=True)
        disc.zero_grads()
        lr_, cache_r = F.bce_with_logits(discriminator_logits(disc, real, train=True), 1.0)
        _backward_logits(disc, F.bce_with_logits_backward(cache_r))
        grads = {k: v.copy() for k, v in disc.gradients().items()}
        lf_, cache_f = F.bce_with_logits(discriminator_logits(disc, fake, train=True), 0.0)
        _backward_logits(disc, F.bce_with_logits_backward(cache_f))
        for name, layer in disc.named_layers():
            for k in layer.grads:
                layer.grads[k] = layer.grads[k] + grads[f"{name}.{k}"]
        gan.opt_d.step()
        d_loss = lr_ + lf_

    gen.set_stats_update(True)
    disc.set_stats_update(False)
    gen.zero_grads()
    fake = generator_forward(gen, sample_latent(rng, n, cfg.latent), train=True)
    g_loss, cache_g = F.bce_with_logits(discriminator_logits(disc, fake, train=True), 1.0)
    dfake = _backward_logits(disc, F.bce_with_logits_backward(cache_g))
    gen.backward(dfake)
    gan.opt_g.step()
    disc.zero_grads()
    disc.set_stats_update(True)

    if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
        raise TrainingError(f"non-finite GAN loss (d={d_loss}, g={g_loss})")
    return StepLosses(float(d_loss), float(g_loss))


@dataclass
class GanLog:
    epoch: list[int] = field(default_factory=list)
    d_loss: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def to_tanh_range(x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=np.float32) * 2.0 - 1.0).astype(np.float32)


def from_tanh_range(x: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(x, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def _class_of(pool: Dataset) -> LesionClass:
    labels = {i.label for i in pool}
    if len(labels) != 1:
        raise ValidationError(f"GAN training pool must hold exactly one class, found {sorted(l.display for l in labels)}")
    return labels.pop()


def train_gan(
    pool: Dataset,
    config: GanTrainConfig,
    out_dir: str | Path | None = None,
    tag: str = "gan",
) -> tuple["TrainedGenerator", GanLog]:
    """Train one class-specific GAN on real ROIs plus their classic augmentations."""
    label = _class_of(pool)
    x, _ = pool.arrays(np.float32)
    if len(x) < 2:
        raise ValidationError("GAN training pool needs at least 2 images")
    x = to_tanh_range(x)
    gan = build_gan(config, label)
    rng = np.random.default_rng(derive_seed(config.seed, "gan-train", label.name))
    batch = min(config.batch_size, len(x))
    lineage = frozenset().union(*(i.lineage for i in pool))
    trained = TrainedGenerator(gan.generator, label, config, tag, lineage)
    out = Path(out_dir) if out_dir is not None else None
    history = GanLog()
    steps = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x))
        d_sum = g_sum = 0.0
        n_steps = 0
        for start in range(0, len(x) - batch + 1, batch):
            try:
                losses = gan_train_step(gan, x[order[start : start + batch]], rng)
            except TrainingError:
                if out is not None:
                    trained.save(out / f"{tag}_diverged.ckpt", epoch=epoch, extra={"diverged": True})
                raise
            d_sum += losses.d_loss
            g_sum += losses.g_loss
            n_steps += 1
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                break
        history.epoch.append(epoch)
        history.d_loss.append(d_sum / max(n_steps, 1))
        history.g_loss.append(g_sum / max(n_steps, 1))
        log.debug("gan=%s epoch=%d d_loss=%.4f g_loss=%.4f", tag, epoch, history.d_loss[-1], history.g_loss[-1])
        if out is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            trained.save(out / f"{tag}_epoch{epoch:04d}.ckpt", epoch=epoch)
        if config.max_steps is not None and steps >= config.max_steps:
            break
    if out is not None:
        trained.save(out / f"{tag}_final.ckpt", epoch=len(history.epoch))
        (out / f"{tag}_log.json").write_text(json.dumps(history.to_dict(), sort_keys=True, indent=1))
    return trained, history


@dataclass
class TrainedGenerator:
    """A frozen class generator plus what the leakage guard needs to know."""

    network: Sequential
    label: LesionClass
    config: GanTrainConfig
    checkpoint_id: str
    lineage: frozenset[str] = frozenset()

    def save(self, path: str | Path, epoch: int = 0, extra: dict | None = None) -> None:
        path = Path(path)
        meta = {
            "class": self.label.display,
            "epoch": epoch,
            "seed": self.config.seed,
            "config_hash": self.config.digest(),
            "config": asdict(self.config),
            "checkpoint_id": self.checkpoint_id,
            "lineage": sorted(self.lineage),
        }
        meta.update(extra or {})
        save_checkpoint(path, self.network.state(), meta)
        sidecar = {k: meta[k] for k in ("class", "epoch", "seed", "config_hash", "checkpoint_id")}
        path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "TrainedGenerator":
        tensors, meta = load_checkpoint(path)
        config = GanTrainConfig(**meta["config"])
        net = build_generator(config.architecture, np.random.default_rng(0))
        net.load_state(tensors)
        return cls(net, LesionClass.parse(meta["class"]), config, meta["checkpoint_id"], frozenset(meta["lineage"]))


def synthesize(gen: TrainedGenerator, n: int, seed: int, prior: str | None = None) -> list[LesionROI]:
    """Draw ``n`` synthetic ROIs (eval-mode generator, pixels in ``[0, 1]``)."""
    if n < 1:
        raise ValidationError("number of synthetic samples must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, "synthesize", gen.checkpoint_id))
    z = sample_latent(rng, n, prior or gen.config.latent)
    imgs = np.concatenate([generator_forward(gen.network, z[i : i + 256]) for i in range(0, n, 256)])
    pixels = quantize16(from_tanh_range(imgs[:, 0]))
    return [
        LesionROI(
            pixels=pixels[i],
            diameter_px=SYNTH_DIAMETER,
            label=gen.label,
            patient_id=f"synthetic:{gen.checkpoint_id}",
            lesion_id=f"{gen.checkpoint_id}#s{seed}_{i}",
            provenance=Provenance.SYNTHETIC,
            origin=gen.checkpoint_id,
            aug_index=i,
            lineage=gen.lineage,
        )
        for i in range(n)
    ]


def tile_grid(images: list[np.ndarray], cols: int = 8, gap: int = 2) -> np.ndarray:
    """Lay out up to ``cols * cols`` equally sized images on a white grid."""
    images = images[: cols * cols]
    if not images:
        raise ValidationError("no images to tile")
    h, w = images[0].shape
    rows = -(-len(images) // cols)
    grid = np.ones((rows * (h + gap) - gap, cols * (w + gap) - gap))
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        grid[r * (h + gap) : r * (h + gap) + h, c * (w + gap) : c * (w + gap) + w] = img
    return grid
