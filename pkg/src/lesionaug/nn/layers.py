"""Stateful layers built on :mod:`.functional`.

A layer owns named parameter arrays in ``params`` and, after ``backward``,
matching arrays in ``grads``. ``forward`` stores what ``backward`` needs, so
each forward must be followed by at most one backward.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ShapeError
from . import functional as F


class Layer:
    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return self.forward(x, train)

    def astype(self, dtype) -> "Layer":
        for d in (self.params, self.buffers):
            for k in d:
                d[k] = d[k].astype(dtype)
        return self


def _init_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Conv2D(Layer):
    def __init__(self, in_ch, out_ch, k, stride=1, padding=0, rng=None, std=None, bias=True, input_grad=True):
        super().__init__()
        self.input_grad = input_grad
        rng = rng or np.random.default_rng(0)
        std = std if std is not None else np.sqrt(2.0 / (in_ch * k * k))
        self.params["w"] = _init_normal(rng, (out_ch, in_ch, k, k), std)
        if bias:
            self.params["b"] = np.zeros(out_ch)
        self.stride, self.padding = stride, padding

    def forward(self, x, train=False):
        out, self._cache = F.conv2d(x, self.params["w"], self.params.get("b"), self.stride, self.padding)
        return out

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self._cache, need_dx=self.input_grad)
        self.grads["w"] = dw
        if db is not None:
            self.grads["b"] = db
        return dx


class ConvTranspose2D(Layer):
    def __init__(self, in_ch, out_ch, k=5, stride=2, padding=2, output_padding=1, rng=None, std=0.02, bias=True):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params["w"] = _init_normal(rng, (in_ch, out_ch, k, k), std)
        if bias:
            self.params["b"] = np.zeros(out_ch)
        self.stride, self.padding, self.output_padding = stride, padding, output_padding

    def forward(self, x, train=False):
        out, self._cache = F.conv2d_transpose(
            x, self.params["w"], self.params.get("b"), self.stride, self.padding, self.output_padding
        )
        return out

    def backward(self, dout):
        dx, dw, db = F.conv2d_transpose_backward(dout, self._cache)
        self.grads["w"] = dw
        if db is not None:
            self.grads["b"] = db
        return dx


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None, std=None, bias=True):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        std = std if std is not None else np.sqrt(2.0 / n_in)
        self.params["w"] = _init_normal(rng, (n_in, n_out), std)
        if bias:
            self.params["b"] = np.zeros(n_out)

    def forward(self, x, train=False):
        out, self._cache = F.dense(x, self.params["w"], self.params.get("b"))
        return out

    def backward(self, dout):
        dx, dw, db = F.dense_backward(dout, self._cache)
        self.grads["w"] = dw
        if db is not None:
            self.grads["b"] = db
        return dx


class BatchNorm2D(Layer):
    def __init__(self, channels, momentum=0.1, rng=None, gamma_std=0.0):
        super().__init__()
        gamma = np.ones(channels)
        if gamma_std and rng is not None:
            gamma = rng.normal(1.0, gamma_std, size=channels)
        self.params["gamma"] = gamma
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.momentum = momentum
        self.update_stats = True

    def forward(self, x, train=False):
        out, self._cache = F.batchnorm2d(
            x,
            self.params["gamma"],
            self.params["beta"],
            self.buffers["running_mean"],
            self.buffers["running_var"],
            train=train,
            momentum=self.momentum,
            update_stats=self.update_stats,
        )
        return out

    def backward(self, dout):
        dx, dg, db = F.batchnorm2d_backward(dout, self._cache)
        self.grads["gamma"], self.grads["beta"] = dg, db
        return dx


class ReLU(Layer):
    def forward(self, x, train=False):
        out, self._cache = F.relu(x)
        return out

    def backward(self, dout):
        return F.relu_backward(dout, self._cache)


class LeakyReLU(Layer):
    def __init__(self, alpha=0.2):
        super().__init__()
        self.alpha = alpha

    def forward(self, x, train=False):
        out, self._cache = F.leaky_relu(x, self.alpha)
        return out

    def backward(self, dout):
        return F.leaky_relu_backward(dout, self._cache)


class Tanh(Layer):
    def forward(self, x, train=False):
        out, self._cache = F.tanh(x)
        return out

    def backward(self, dout):
        return F.tanh_backward(dout, self._cache)


class Sigmoid(Layer):
    def forward(self, x, train=False):
        out, self._cache = F.sigmoid(x)
        return out

    def backward(self, dout):
        return F.sigmoid_backward(dout, self._cache)


class MaxPool2D(Layer):
    def __init__(self, k=2):
        super().__init__()
        self.k = k

    def forward(self, x, train=False):
        out, self._cache = F.maxpool2d(x, self.k, self.k)
        return out

    def backward(self, dout):
        return F.maxpool2d_backward(dout, self._cache)


class Dropout(Layer):
    """Inverted dropout drawing masks from its own seeded generator."""

    def __init__(self, rate=0.5, seed=0):
        super().__init__()
        self.rate = rate
        self.rng = np.random.default_rng(seed)

    def forward(self, x, train=False):
        out, self._cache = F.dropout(x, self.rate, train, self.rng)
        return out

    def backward(self, dout):
        return F.dropout_backward(dout, self._cache)


class Reshape(Layer):
    def __init__(self, *shape):
        super().__init__()
        self.shape = shape

    def forward(self, x, train=False):
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dout):
        return dout.reshape(self._cache)


class Flatten(Reshape):
    def __init__(self):
        super().__init__(-1)


class Sequential(Layer):
    """Ordered stack of named layers."""

    def __init__(self, layers: list[tuple[str, Layer]]):
        super().__init__()
        names = [n for n, _ in layers]
        if len(set(names)) != len(names):
            raise ShapeError("layer names must be unique")
        self.layers = list(layers)
        self.trace: list[tuple[str, tuple[int, ...]]] = []

    def forward(self, x, train=False):
        self.trace = []
        for name, layer in self.layers:
            x = layer.forward(x, train)
            self.trace.append((name, x.shape))
        return x

    def backward(self, dout):
        for _, layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def named_layers(self) -> Iterator[tuple[str, Layer]]:
        return iter(self.layers)

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.layers for k, v in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.layers for k, v in layer.grads.items()}

    def state(self) -> dict[str, np.ndarray]:
        """Parameters plus buffers, for checkpoints."""
        out = self.parameters()
        out.update({f"{n}.{k}": v for n, layer in self.layers for k, v in layer.buffers.items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, layer in self.layers:
            for store in (layer.params, layer.buffers):
                for k in store:
                    arr = state[f"{n}.{k}"]
                    if arr.shape != store[k].shape:
                        raise ShapeError(f"{n}.{k}: checkpoint shape {arr.shape} != {store[k].shape}")
                    store[k] = arr.astype(store[k].dtype)

    def zero_grads(self) -> None:
        for _, layer in self.layers:
            layer.grads = {}

    def astype(self, dtype) -> "Sequential":
        for _, layer in self.layers:
            layer.astype(dtype)
        return self

    def set_stats_update(self, flag: bool) -> None:
        for _, layer in self.layers:
            if isinstance(layer, BatchNorm2D):
                layer.update_stats = flag
