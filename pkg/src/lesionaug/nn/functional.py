"""Forward and backward passes for the operator set.

Every ``op`` returns ``(out, cache)`` and has a matching ``op_backward(dout,
cache)`` returning gradients in argument order. Arrays are NCHW. Convolution
is cross-correlation (the kernel is not flipped). The functions preserve the
input dtype, so the same code runs float64 gradient checks and float32
training.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError, ValidationError

BN_EPS = 1e-5
PROB_EPS = 1e-7


def check_finite(x: np.ndarray, what: str = "input") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{what} contains NaN or Inf")
    return x


def conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv_transpose_out_size(size: int, k: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * padding + k + output_padding


# -- im2col helpers -------------------------------------------------------------
#
# Columns are laid out (kernel_row, kernel_col, channel) from a channels-last
# copy of the input, which keeps the gather copy cache-friendly.


def _pad_nhwc(x: np.ndarray, padding: int) -> np.ndarray:
    xn = x.transpose(0, 2, 3, 1)
    if padding:
        return np.pad(xn, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    return np.ascontiguousarray(xn)


def _im2col(xn: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, Hp, Wp, C) -> (N*ho*wo, k*k*C)."""
    n, c = xn.shape[0], xn.shape[3]
    win = sliding_window_view(xn, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add (N*ho*wo, k*k*C) columns into a zero (N, Hp, Wp, C) array."""
    n, hp, wp, c = shape
    out = np.zeros(shape, dtype=cols.dtype)
    cols = cols.reshape(n, ho, wo, k, k, c)
    for i in range(k):
        for j in range(k):
            out[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += cols[:, :, :, i, j, :]
    return out


def _wmat(w: np.ndarray) -> np.ndarray:
    """(A, B, k, k) -> (A, k*k*B) matching the column layout."""
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def _nchw(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.transpose(0, 3, 1, 2))


# -- convolution -----------------------------------------------------------------


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1, padding: int = 0):
    """Strided 2-D cross-correlation; ``w`` is ``(out_ch, in_ch, k, k)``."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D x and w, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2:
        raise ShapeError(f"conv2d: input has {c} channels, kernel {w.shape}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({o},)")
    if stride < 1 or padding < 0:
        raise ShapeError("conv2d: stride must be >= 1 and padding >= 0")
    if k > h + 2 * padding or k > wd + 2 * padding:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {h}x{wd}+{padding}")
    ho, wo = conv_out_size(h, k, stride, padding), conv_out_size(wd, k, stride, padding)
    xn = _pad_nhwc(x, padding)
    cols = _im2col(xn, k, stride, ho, wo)
    out = cols @ _wmat(w).T
    if b is not None:
        out += b
    return _nchw(out.reshape(n, ho, wo, o)), (cols, x.shape, xn.shape, w, stride, padding, ho, wo, b is not None)


def conv2d_backward(dout: np.ndarray, cache, need_dx: bool = True):
    cols, xshape, xnshape, w, stride, padding, ho, wo, has_b = cache
    o, c, k, _ = w.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (d2.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2)
    db = d2.sum(axis=0) if has_b else None
    if not need_dx:
        return None, np.ascontiguousarray(dw), db
    dxn = _col2im(d2 @ _wmat(w), xnshape, k, stride, ho, wo)
    h, wd = xshape[2:]
    dx = _nchw(dxn[:, padding : padding + h, padding : padding + wd, :])
    return dx, np.ascontiguousarray(dw), db


def conv2d_transpose(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray | None = None,
    stride: int = 2,
    padding: int = 2,
    output_padding: int = 1,
):
    """Fractionally-strided convolution, the adjoint of :func:`conv2d`.

    ``w`` has the conv2d layout read the other way round: ``(in_ch, out_ch,
    k, k)`` here is ``(out_ch, in_ch, k, k)`` for the matching conv2d, so
    ``<conv2d(u, w), v> == <u, conv2d_transpose(v, w)>`` with zero bias.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d_transpose expects 4-D x and w, got {x.shape} and {w.shape}")
    n, ci, h, wd = x.shape
    wi, co, k, k2 = w.shape
    if wi != ci or k != k2:
        raise ShapeError(f"conv2d_transpose: input has {ci} channels, kernel {w.shape}")
    if b is not None and b.shape != (co,):
        raise ShapeError(f"conv2d_transpose: bias shape {b.shape} != ({co},)")
    if not 0 <= output_padding < stride:
        raise ShapeError("output_padding must be in [0, stride)")
    ho = conv_transpose_out_size(h, k, stride, padding, output_padding)
    wo = conv_transpose_out_size(wd, k, stride, padding, output_padding)
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d_transpose: non-positive output size")
    xf = x.transpose(0, 2, 3, 1).reshape(-1, ci)
    cols = xf @ _wmat(w)
    buf = _col2im(cols, (n, ho + 2 * padding, wo + 2 * padding, co), k, stride, h, wd)
    out = buf[:, padding : padding + ho, padding : padding + wo, :]
    if b is not None:
        out = out + b
    return _nchw(out), (xf, x.shape, w, stride, padding, b is not None)


def conv2d_transpose_backward(dout: np.ndarray, cache, need_dx: bool = True):
    xf, xshape, w, stride, padding, has_b = cache
    n, ci, h, wd = xshape
    _, co, k, _ = w.shape
    cols = _im2col(_pad_nhwc(dout, padding), k, stride, h, wd)
    dw = (xf.T @ cols).reshape(ci, k, k, co).transpose(0, 3, 1, 2)
    db = dout.sum(axis=(0, 2, 3)) if has_b else None
    dx = _nchw((cols @ _wmat(w).T).reshape(n, h, wd, ci)) if need_dx else None
    return dx, np.ascontiguousarray(dw), db


# -- dense ------------------------------------------------------------------------


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray | None):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: x {x.shape} incompatible with w {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias shape {b.shape} != ({w.shape[1]},)")
    out = x @ w
    if b is not None:
        out += b
    return out, (x, w, b is not None)


def dense_backward(dout: np.ndarray, cache):
    x, w, has_b = cache
    return dout @ w.T, x.T @ dout, (dout.sum(axis=0) if has_b else None)


# -- normalisation ------------------------------------------------------------------


def batchnorm2d(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool = True,
    momentum: float = 0.1,
    eps: float = BN_EPS,
    update_stats: bool = True,
):
    """Per-channel batch normalisation.

    In training mode the running statistics are updated in place (unless
    ``update_stats`` is false) using the unbiased batch variance.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm2d: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if train:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if x.shape[0] < 2:
            raise ValidationError("batchnorm2d needs a batch of at least 2 in training mode")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out.astype(x.dtype, copy=False), (xhat, gamma, inv, train)


def batchnorm2d_backward(dout: np.ndarray, cache):
    xhat, gamma, inv, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    if not train:
        return dxhat * inv[None, :, None, None], dgamma, dbeta
    mean_dxhat = dxhat.mean(axis=(0, 2, 3), keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
    dx = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv[None, :, None, None]
    return dx, dgamma, dbeta


# -- activations ---------------------------------------------------------------------


def relu(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask):
    return dout * mask


def leaky_relu(x: np.ndarray, alpha: float = 0.2):
    slope = np.where(x > 0, 1.0, alpha).astype(x.dtype)
    return x * slope, slope


def leaky_relu_backward(dout: np.ndarray, slope):
    return dout * slope


def tanh(x: np.ndarray):
    y = np.tanh(x)
    return y, y


def tanh_backward(dout: np.ndarray, y):
    return dout * (1.0 - y * y)


def sigmoid(x: np.ndarray):
    # Split by sign so large |x| never overflows exp.
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y, y


def sigmoid_backward(dout: np.ndarray, y):
    return dout * y * (1.0 - y)


# -- pooling / dropout -----------------------------------------------------------------


def maxpool2d(x: np.ndarray, k: int = 2, stride: int = 2):
    """Non-overlapping max pooling; ties route to the first index (row-major)."""
    if k != stride:
        raise ShapeError("only non-overlapping pooling (k == stride) is supported")
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"maxpool2d: spatial dims {h}x{w} not divisible by {k}")
    views = [x[:, :, i::k, j::k] for i in range(k) for j in range(k)]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)
    taken = np.zeros(out.shape, dtype=bool)
    masks = []
    for v in views:
        m = (v == out) & ~taken
        taken |= m
        masks.append(m)
    return out, (masks, x.shape, k)


def maxpool2d_backward(dout: np.ndarray, cache):
    masks, shape, k = cache
    dx = np.zeros(shape, dtype=dout.dtype)
    for idx, m in enumerate(masks):
        i, j = divmod(idx, k)
        dx[:, :, i::k, j::k] = dout * m
    return dx


def dropout(x: np.ndarray, rate: float = 0.5, train: bool = True, rng: np.random.Generator | None = None):
    """Inverted dropout. Identity in eval mode or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ValidationError("dropout in training mode needs an explicit generator")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask):
    return dout if mask is None else dout * mask


# -- losses ------------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_crossentropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of softmax(logits) against integer labels."""
    check_finite(logits, "logits")
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels]))
    return loss, (softmax(logits), labels)


def softmax_crossentropy_backward(cache):
    p, labels = cache
    n = p.shape[0]
    g = p.copy()
    g[np.arange(n), labels] -= 1.0
    return g / n


def bce(prob: np.ndarray, target: np.ndarray | float):
    """Mean binary cross-entropy on probabilities (clamped to ``[eps, 1-eps]``)."""
    check_finite(prob, "probabilities")
    t = np.broadcast_to(np.asarray(target, dtype=prob.dtype), prob.shape)
    p = np.clip(prob, PROB_EPS, 1.0 - PROB_EPS)
    loss = float(-np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)))
    return loss, (p, t, prob)


def bce_backward(cache):
    p, t, prob = cache
    g = (p - t) / (p * (1.0 - p)) / p.size
    inside = (prob > PROB_EPS) & (prob < 1.0 - PROB_EPS)
    return g * inside


def bce_with_logits(logits: np.ndarray, target: np.ndarray | float):
    """BCE evaluated on ``sigmoid(logits)`` in a numerically stable form."""
    check_finite(logits, "logits")
    t = np.broadcast_to(np.asarray(target, dtype=logits.dtype), logits.shape)
    loss = np.maximum(logits, 0) - logits * t + np.log1p(np.exp(-np.abs(logits)))
    return float(np.mean(loss)), (logits, t)


def bce_with_logits_backward(cache):
    logits, t = cache
    p, _ = sigmoid(logits)
    return (p - t) / logits.size
