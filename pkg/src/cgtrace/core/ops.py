"""Differentiable layer primitives on NCHW tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, Tensor


@dataclass(frozen=True)
class ConvSpec:
    """Convolution geometry: channels, kernel extent, stride and zero padding."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ValueError("kernel extents must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if min(self.in_channels, self.out_channels) < 1 or self.padding < 0:
            raise ValueError("invalid channel count or padding")

    @classmethod
    def square(cls, cin: int, cout: int, k: int, stride: int = 1, padding: int | None = None):
        """Square kernel; padding defaults to ``k // 2`` (size preserving at stride 1)."""
        return cls(cin, cout, k, k, stride, k // 2 if padding is None else padding)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        ho = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if ho < 1 or wo < 1:
            raise DimensionError(f"input {h}x{w} too small for {self}")
        return ho, wo


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """2-D cross-correlation with zero padding, via im2col and one matmul."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input, got {x.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if (cin, cout, kh, kw) != (spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w):
        raise DimensionError(f"input {x.shape} / weight {weight.shape} disagree with {spec}")
    if wcin != cin:
        raise DimensionError(f"weight expects {wcin} channels, input has {cin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"bias shape {bias.shape} != ({cout},)")
    s, p = spec.stride, spec.padding
    ho, wo = spec.output_size(h, w)

    # im2col in NHWC: each (kw, cin) run of a patch row is contiguous
    xn = x.data.transpose(0, 2, 3, 1)
    xp = np.pad(xn, ((0, 0), (p, p), (p, p), (0, 0))) if p else xn
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::s, ::s][:, :ho, :wo]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
    wk = weight.data.transpose(0, 2, 3, 1).reshape(cout, -1)
    out = cols @ wk.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    hp, wp = xp.shape[1], xp.shape[2]

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = None
        if weight.requires_grad:
            gw = (gmat.T @ cols).reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
            gw = np.ascontiguousarray(gw)
        gb = gmat.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            # col2im in NHWC so every strided add runs over contiguous channels
            dcols = (gmat @ wk).reshape(n, ho, wo, kh, kw, cin)
            gxp = np.zeros((n, hp, wp, cin), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + s * ho : s, j : j + s * wo : s, :] += dcols[:, :, :, i, j, :]
            gxp = gxp.transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(gxp[:, :, p : p + h, p : p + w] if p else gxp)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward, "conv2d")


def avg_pool2d(x: Tensor, window: int = 2, stride: int | None = None) -> Tensor:
    """Mean over each ``window`` x ``window`` patch, stepping by ``stride``."""
    stride = window if stride is None else stride
    n, c, h, w = x.shape
    if window > h or window > w:
        raise DimensionError(f"pool window {window} larger than input {h}x{w}")
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    scale = 1.0 / (window * window)
    if window == stride and h % window == 0 and w % window == 0:
        a = x.data
        out = sum(a[:, :, i::window, j::window] for i in range(window) for j in range(window))
        out = out * np.asarray(scale, dtype=a.dtype)

        def backward(g):
            gs = (g * np.asarray(scale, dtype=g.dtype))[:, :, :, None, :, None]
            return (np.broadcast_to(gs, (n, c, ho, window, wo, window)).reshape(n, c, h, w),)

    else:
        win = sliding_window_view(x.data, (window, window), axis=(2, 3))
        out = win[:, :, ::stride, ::stride][:, :, :ho, :wo].mean(axis=(4, 5))

        def backward(g):
            gx = np.zeros(x.shape, dtype=g.dtype)
            gs = g * scale
            for i in range(window):
                for j in range(window):
                    gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gs
            return (gx,)

    return Tensor._make(np.ascontiguousarray(out), (x,), backward, "avg_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """N x C x H x W -> N x C spatial mean."""
    return x.mean(axis=(2, 3))


def relu(x: Tensor) -> Tensor:
    a = x.data
    mask = a > 0
    return Tensor._make(np.where(mask, a, 0).astype(a.dtype), (x,), lambda g: (g * mask,), "relu")


def relu6(x: Tensor) -> Tensor:
    """Clamp to [0, 6]; the subgradient is 0 at both kinks."""
    a = x.data
    mask = (a > 0) & (a < 6)
    return Tensor._make(np.clip(a, 0, 6), (x,), lambda g: (g * mask,), "relu6")


def clamp01(x: Tensor) -> Tensor:
    a = x.data
    mask = (a > 0) & (a < 1)
    return Tensor._make(np.clip(a, 0, 1), (x,), lambda g: (g * mask,), "clamp01")


def _stable_sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Logistic 1 / (1 + exp(-x)), evaluated without overflow."""
    out = _stable_sigmoid(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(x: Tensor) -> Tensor:
    a = x.data
    out = np.minimum(a, 0) - np.log1p(np.exp(-np.abs(a)))
    return Tensor._make(out, (x,), lambda g: (g * (1.0 - _stable_sigmoid(a)),), "log_sigmoid")


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    z = logits.data
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (logits,), backward, "softmax")


def log_softmax(logits: Tensor, axis: int = -1) -> Tensor:
    z = logits.data
    shifted = z - z.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (logits,), backward, "log_softmax")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with weight stored as (out, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} vs weight {weight.shape}")
    a, w = x.data, weight.data
    out = a @ w.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gb = g.sum(axis=0) if bias is not None else None
        return g @ w, g.T @ a, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward, "linear")


fully_connected = linear


def _check_labels(labels, n: int, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    return labels


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean of -log p[label] over rows of a probability matrix (p clamped at 1e-12)."""
    n, k = probs.shape
    labels = _check_labels(labels, n, k)
    rows = np.arange(n)
    picked = probs.data[rows, labels]
    clamped = np.maximum(picked, 1e-12)
    loss = np.asarray(-np.log(clamped).mean(), dtype=probs.dtype)

    def backward(g):
        gp = np.zeros_like(probs.data)
        gp[rows, labels] = np.where(picked > 1e-12, -1.0 / (n * clamped), 0.0)
        return (gp * g,)

    return Tensor._make(loss, (probs,), backward, "cross_entropy")


def cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Fused log-softmax + negative log-likelihood, averaged over rows."""
    n, k = logits.shape
    labels = _check_labels(labels, n, k)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1.0
    logp = log_softmax(logits, axis=1)
    return (logp * Tensor(onehot)).sum() * (-1.0 / n)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of an NCHW tensor.

    In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance); in eval mode the
    running statistics are used.
    """
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm affine params must be ({c},)")
    a = x.data
    m = n * h * w
    if training:
        if m < 2:
            raise ValueError("batch_norm in train mode needs at least 2 values per channel")
        mean = a.mean(axis=(0, 2, 3))
        var = a.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * m / (m - 1)
    else:
        mean, var = running_mean.astype(a.dtype), running_var.astype(a.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a - mean[None, :, None, None]) * inv[None, :, None, None]
    gam = gamma.data[None, :, None, None]
    out = xhat * gam + beta.data[None, :, None, None]

    def backward(g):
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gxhat = g * gam
        if training:
            gx = (inv[None, :, None, None] / m) * (
                m * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return Tensor._make(out.astype(a.dtype, copy=False), (x, gamma, beta), backward, "batch_norm")


def channel_mean(x: Tensor) -> Tensor:
    """N x C x H x W -> N x 1 x H x W mean over channels."""
    return x.mean(axis=1, keepdims=True)


def channel_max(x: Tensor) -> Tensor:
    """N x C x H x W -> N x 1 x H x W max over channels (gradient to first argmax)."""
    a = x.data
    idx = a.argmax(axis=1)[:, None]
    out = np.take_along_axis(a, idx, axis=1)

    def backward(g):
        gx = np.zeros_like(a)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return Tensor._make(out, (x,), backward, "channel_max")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor._make(out, (x,), backward, "upsample_nearest")
