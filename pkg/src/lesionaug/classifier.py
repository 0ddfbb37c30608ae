"""Three-stage convolutional lesion classifier.

Architecture: three (conv -> ReLU -> 2x2 max-pool) stages, a ReLU dense
layer followed by dropout, and a 3-way dense head. Softmax is applied by the
loss and by :func:`predict`.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import ROI_SIZE, Dataset, LesionClass, require_real
from .errors import ShapeError, TrainingError, ValidationError
from .experiment.metrics import ConfusionMatrix, confusion_matrix
from .nn import functional as F
from .nn.layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU, Sequential
from .nn.optim import Adam
from .seeding import derive_seed


@dataclass(frozen=True)
class ClassifierConfig:
    channels: tuple[int, ...] = (32, 64, 128)
    kernel: int = 3
    hidden: int = 256
    dropout: float = 0.5
    batch_size: int = 64
    lr: float = 1e-3
    epochs: int = 150
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 3:
            raise ValidationError(f"classifier needs exactly 3 conv stages, got {len(self.channels)}")
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise ValidationError("kernel size must be odd")
        if self.batch_size < 1 or self.epochs < 0 or self.hidden < 1:
            raise ValidationError("batch_size and hidden must be positive, epochs non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout rate must be in [0, 1)")


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_acc"])
            for row in zip(self.epoch, self.train_loss, self.train_acc):
                w.writerow([row[0], repr(row[1]), repr(row[2])])


def build_classifier(config: ClassifierConfig, seed: int | None = None, dtype=np.float32) -> Sequential:
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(derive_seed(seed, "classifier-init"))
    c1, c2, c3 = config.channels
    k, pad = config.kernel, config.kernel // 2
    flat = c3 * (ROI_SIZE // 8) ** 2
    net = Sequential(
        [
            ("conv1", Conv2D(1, c1, k, 1, pad, rng=rng, input_grad=False)),
            ("relu1", ReLU()),
            ("pool1", MaxPool2D(2)),
            ("conv2", Conv2D(c1, c2, k, 1, pad, rng=rng)),
            ("relu2", ReLU()),
            ("pool2", MaxPool2D(2)),
            ("conv3", Conv2D(c2, c3, k, 1, pad, rng=rng)),
            ("relu3", ReLU()),
            ("pool3", MaxPool2D(2)),
            ("flatten", Flatten()),
            ("fc1", Dense(flat, config.hidden, rng=rng)),
            ("relu4", ReLU()),
            ("dropout", Dropout(config.dropout, seed=derive_seed(seed, "dropout"))),
            ("head", Dense(config.hidden, len(LesionClass), rng=rng, std=np.sqrt(1.0 / config.hidden))),
        ]
    )
    return net.astype(dtype)


def train_classifier(
    train_set: Dataset, config: ClassifierConfig, seed: int | None = None
) -> tuple[Sequential, TrainHistory]:
    """Mini-batch Adam on softmax cross-entropy.

    Deterministic for a given seed: shuffling, dropout masks and
    initialisation all draw from seeds derived from it.
    """
    seed = config.seed if seed is None else seed
    if len(train_set) == 0:
        raise ValidationError("training set is empty")
    empty = [c.display for c, n in train_set.class_counts().items() if n == 0]
    if empty:
        raise ValidationError(f"training set has no examples of {empty}")
    x, y = train_set.arrays(np.float32)
    return fit_arrays(x, y, config, seed)


def fit_arrays(x: np.ndarray, y: np.ndarray, config: ClassifierConfig, seed: int) -> tuple[Sequential, TrainHistory]:
    net = build_classifier(config, seed)
    opt = Adam(net, lr=config.lr)
    history = TrainHistory()
    shuffle = np.random.default_rng(derive_seed(seed, "shuffle"))
    n = len(y)
    steps = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            logits = net.forward(x[idx], train=True)
            loss, cache = F.softmax_crossentropy(logits, y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite classifier loss at epoch {epoch}")
            net.backward(F.softmax_crossentropy_backward(cache).astype(np.float32))
            opt.step()
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y[idx]).sum())
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                break
        seen = min(n, start + config.batch_size)
        history.epoch.append(epoch)
        history.train_loss.append(loss_sum / seen)
        history.train_acc.append(correct / seen)
        if config.max_steps is not None and steps >= config.max_steps:
            break
    return net, history


def predict_proba(net: Sequential, images: np.ndarray, batch: int = 256) -> np.ndarray:
    """Class probabilities for ``(N, 64, 64)`` or ``(N, 1, 64, 64)`` images."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[:, None]
    if images.ndim != 4 or images.shape[1:] != (1, ROI_SIZE, ROI_SIZE):
        raise ShapeError(f"expected (N, 1, {ROI_SIZE}, {ROI_SIZE}) images, got {images.shape}")
    out = [F.softmax(net.forward(images[i : i + batch], train=False).astype(np.float64)) for i in range(0, len(images), batch)]
    return np.concatenate(out) if out else np.zeros((0, len(LesionClass)))


def predict(net: Sequential, roi: np.ndarray) -> np.ndarray:
    """Probability triple for one 64x64 image."""
    roi = np.asarray(roi)
    if roi.shape != (ROI_SIZE, ROI_SIZE):
        raise ShapeError(f"expected a {ROI_SIZE}x{ROI_SIZE} image, got {roi.shape}")
    return predict_proba(net, roi[None])[0]


def evaluate(net: Sequential, test_set: Dataset) -> ConfusionMatrix:
    require_real(test_set.items)
    x, y = test_set.arrays(np.float32)
    preds = predict_proba(net, x).argmax(axis=1) if len(y) else np.zeros(0, np.int64)
    return confusion_matrix(preds, y)


def config_dict(config: ClassifierConfig) -> dict:
    d = asdict(config)
    d["channels"] = list(config.channels)
    return d
