"""Neural network layers: functional forwards plus tape-registered gradients.

Each layer exists in two forms that share the same ndarray-level core:

  * a plain function over Tensors (conv2d, batchnorm2d, ...) used by the
    memory-light inference path and by unit tests, and
  * a registered tape op (same name) used by the training path.

Convolutions and pooling dispatch to the kernels subpackage, so both forms
follow the RCNET_BACKEND selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .autograd import register_op
from .tensor import Tensor

CLAMP = 1e-12  # probability floor inside the cross-entropy log


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class ConvParams:
    """kernel [out, in, kh, kw] with kh == kw in {1, 3}; bias [out]."""

    kernel: Tensor
    bias: Tensor

    def __post_init__(self):
        k = self.kernel.shape
        if len(k) != 4 or k[2] != k[3] or k[2] not in (1, 3):
            raise ValueError(f"bad conv kernel shape {k}")
        if self.bias.shape != (k[0],):
            raise ValueError(f"bias shape {self.bias.shape} != ({k[0]},)")


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = 0.1
    eps: float = 1e-5

    def __post_init__(self):
        c = self.gamma.shape
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != c:
                raise ValueError(f"batchnorm {name} shape != gamma shape {c}")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError(f"momentum {self.momentum} outside (0, 1)")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")


@dataclass
class PoolIndices:
    """Per-output argmax positions, flattened row-major within each plane."""

    offsets: np.ndarray  # int64 [n, c, h/2, w/2]
    input_hw: tuple[int, int]

    def validate(self) -> None:
        n, c, ho, wo = self.offsets.shape
        h, w = self.input_hw
        ys = np.arange(ho)[:, None] * 2
        xs = np.arange(wo)[None, :] * 2
        r, cc = self.offsets // w, self.offsets % w
        if not ((r >= ys) & (r <= ys + 1) & (cc >= xs) & (cc <= xs + 1)).all():
            raise ValueError("pool index outside its 2x2 window")


# ---------------------------------------------------------------------------
# ndarray-level cores


def _check_conv_args(x, w, padding):
    if x.ndim != 4:
        raise ValueError(f"conv input must be 4-d, got shape {x.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(
            f"conv input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    k = w.shape[2]
    if padding not in (0, 1) or (k == 1 and padding != 0):
        raise ValueError(f"padding {padding} invalid for {k}x{k} kernel")
    if x.shape[2] + 2 * padding < k or x.shape[3] + 2 * padding < k:
        raise ValueError(f"input {x.shape} too small for {k}x{k} kernel")


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv2d_core(x, w, b, padding):
    out = K.conv2d_forward(_pad(x, padding), w)
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out


def _conv2d_grads(x, w, go, padding):
    xp = _pad(x, padding)
    gw = K.conv2d_backward_kernel(xp, go)
    gxp = K.conv2d_backward_input(w, go, xp.shape[2], xp.shape[3])
    p = padding
    gx = gxp if p == 0 else np.ascontiguousarray(
        gxp[:, :, p:xp.shape[2] - p, p:xp.shape[3] - p])
    gb = go.sum(axis=(0, 2, 3))
    return gx, gw, gb


def _per_channel(v):
    return v.reshape(1, -1, 1, 1)


def _bn_train_core(x, gamma, beta, eps):
    axes = (0, 2, 3)
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)  # biased, matches the running-stat update
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - _per_channel(mean)) * _per_channel(inv_std)
    out = _per_channel(gamma) * xhat + _per_channel(beta)
    return out.astype(x.dtype, copy=False), mean, var, inv_std


def _bn_train_backward(x, gamma, mean, inv_std, go):
    m = x.shape[0] * x.shape[2] * x.shape[3]
    xhat = (x - _per_channel(mean)) * _per_channel(inv_std)
    gbeta = go.sum(axis=(0, 2, 3))
    ggamma = (go * xhat).sum(axis=(0, 2, 3))
    gx = _per_channel(gamma * inv_std) * (
        go - _per_channel(gbeta) / m - xhat * _per_channel(ggamma) / m)
    return gx.astype(x.dtype, copy=False), ggamma, gbeta


def _bn_eval_core(x, gamma, beta, rm, rv, eps):
    inv_std = 1.0 / np.sqrt(rv + eps)
    out = _per_channel(gamma * inv_std) * (x - _per_channel(rm)) \
        + _per_channel(beta)
    return out.astype(x.dtype, copy=False)


def _bn_eval_backward(x, gamma, rm, rv, eps, go):
    inv_std = 1.0 / np.sqrt(rv + eps)
    xhat = (x - _per_channel(rm)) * _per_channel(inv_std)
    gx = go * _per_channel(gamma * inv_std)
    ggamma = (go * xhat).sum(axis=(0, 2, 3))
    gbeta = go.sum(axis=(0, 2, 3))
    return gx.astype(x.dtype, copy=False), ggamma, gbeta


def _softmax2_core(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def _softmax2_backward(probs, go):
    s = (go * probs).sum(axis=1, keepdims=True)
    return probs * (go - s)


def _check_wce_args(probs, target, fov):
    if probs.ndim != 4 or probs.shape[1] != 2:
        raise ValueError(f"probabilities must be [n, 2, h, w], got {probs.shape}")
    want = (probs.shape[0], probs.shape[2], probs.shape[3])
    if target.shape != want or fov.shape != want:
        raise ValueError(
            f"target/fov shape must be {want}, got {target.shape}/{fov.shape}")


def _wce_core(probs, target, weights, fov):
    tgt = target.astype(np.int64)
    pt = np.take_along_axis(probs, tgt[:, None], axis=1)[:, 0]
    fov_f = (fov != 0).astype(probs.dtype)
    count = fov_f.sum()
    if count == 0:
        raise ValueError("field-of-view mask selects no pixels")
    wmap = np.where(tgt == 1, weights[1], weights[0]).astype(probs.dtype)
    loss = -(fov_f * wmap * np.log(np.maximum(pt, CLAMP))).sum() / count
    return np.asarray(loss, dtype=probs.dtype), pt, wmap, fov_f, count


def _wce_backward(probs, tgt, pt, wmap, fov_f, count, g):
    live = (pt >= CLAMP).astype(probs.dtype)  # log is clamped below this
    gpt = -g * wmap * fov_f * live / (count * np.maximum(pt, CLAMP))
    gp = np.zeros_like(probs)
    np.put_along_axis(gp, tgt[:, None], gpt[:, None].astype(probs.dtype), axis=1)
    return gp


# ---------------------------------------------------------------------------
# registered tape ops


def _op_conv_fw(ctx, x, w, b, *, padding):
    _check_conv_args(x, w, padding)
    ctx["x"], ctx["w"], ctx["padding"] = x, w, padding
    return _conv2d_core(x, w, b, padding)


def _op_conv_bw(ctx, g):
    return _conv2d_grads(ctx["x"], ctx["w"], g, ctx["padding"])


def _op_bn_fw(ctx, x, gamma, beta, *, running_mean, running_var,
              momentum, eps, mode):
    if mode == "train":
        if x.shape[0] * x.shape[2] * x.shape[3] < 2:
            raise ValueError("batchnorm needs >= 2 samples per channel to train")
        out, mean, var, inv_std = _bn_train_core(x, gamma, beta, eps)
        ctx.update(x=x, gamma=gamma, mean=mean, inv_std=inv_std, mode=mode)
        ctx["new_running"] = (
            (1.0 - momentum) * running_mean + momentum * mean,
            (1.0 - momentum) * running_var + momentum * var,
        )
        return out
    if mode == "eval":
        ctx.update(x=x, gamma=gamma, rm=running_mean, rv=running_var,
                   eps=eps, mode=mode)
        return _bn_eval_core(x, gamma, beta, running_mean, running_var, eps)
    raise ValueError(f"unknown batchnorm mode {mode!r}")


def _op_bn_bw(ctx, g):
    if ctx["mode"] == "train":
        return _bn_train_backward(ctx["x"], ctx["gamma"], ctx["mean"],
                                  ctx["inv_std"], g)
    return _bn_eval_backward(ctx["x"], ctx["gamma"], ctx["rm"], ctx["rv"],
                             ctx["eps"], g)


def _op_relu_fw(ctx, x):
    out = np.maximum(x, 0)
    ctx["out"] = out
    return out


def _op_relu_bw(ctx, g):
    return (g * (ctx["out"] > 0),)


def _op_pool_fw(ctx, x):
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"max pool needs even 4-d input, got shape {x.shape}")
    out, idx = K.maxpool2d_forward(x)
    ctx["indices"] = idx
    ctx["hw"] = (x.shape[2], x.shape[3])
    return out


def _op_pool_bw(ctx, g):
    h, w = ctx["hw"]
    return (K.scatter_by_index(g, ctx["indices"], h, w),)


def _op_unpool_fw(ctx, y, *, indices):
    if indices.shape != y.shape:
        raise ValueError(
            f"unpool indices shape {indices.shape} != input shape {y.shape}")
    ctx["indices"] = indices
    return K.scatter_by_index(y, indices, 2 * y.shape[2], 2 * y.shape[3])


def _op_unpool_bw(ctx, g):
    return (K.gather_by_index(g, ctx["indices"]),)


def _op_softmax_fw(ctx, x):
    if x.ndim != 4 or x.shape[1] != 2:
        raise ValueError(f"softmax expects [n, 2, h, w], got {x.shape}")
    p = _softmax2_core(x)
    ctx["probs"] = p
    return p


def _op_softmax_bw(ctx, g):
    return (_softmax2_backward(ctx["probs"], g),)


def _op_wce_fw(ctx, probs, *, target, weights, fov):
    _check_wce_args(probs, target, fov)
    loss, pt, wmap, fov_f, count = _wce_core(probs, target, weights, fov)
    ctx.update(probs=probs, tgt=target.astype(np.int64), pt=pt, wmap=wmap,
               fov_f=fov_f, count=count)
    return loss


def _op_wce_bw(ctx, g):
    gp = _wce_backward(ctx["probs"], ctx["tgt"], ctx["pt"], ctx["wmap"],
                       ctx["fov_f"], ctx["count"], g)
    return (gp,)


register_op("conv2d", _op_conv_fw, _op_conv_bw)
register_op("batchnorm2d", _op_bn_fw, _op_bn_bw)
register_op("relu", _op_relu_fw, _op_relu_bw)
register_op("maxpool2d", _op_pool_fw, _op_pool_bw)
register_op("maxunpool2d", _op_unpool_fw, _op_unpool_bw)
register_op("softmax_channels", _op_softmax_fw, _op_softmax_bw)
register_op("weighted_cross_entropy", _op_wce_fw, _op_wce_bw)


# ---------------------------------------------------------------------------
# functional API over Tensors


def conv2d(x: Tensor, p: ConvParams, padding: int) -> Tensor:
    _check_conv_args(x.data, p.kernel.data, padding)
    return Tensor(_conv2d_core(x.data, p.kernel.data, p.bias.data, padding))


def batchnorm2d(x: Tensor, p: BatchNormParams, mode: str = "eval") -> Tensor:
    """Channel-wise normalization.  Train mode updates the running stats on
    p (rebinding fresh tensors, never writing in place)."""
    if x.data.ndim != 4 or x.shape[1] != p.gamma.shape[0]:
        raise ValueError(
            f"batchnorm input {x.shape} does not match {p.gamma.shape[0]} channels")
    if mode == "train":
        if x.shape[0] * x.shape[2] * x.shape[3] < 2:
            raise ValueError("batchnorm needs >= 2 samples per channel to train")
        out, mean, var, _ = _bn_train_core(x.data, p.gamma.data, p.beta.data,
                                           p.eps)
        m = p.momentum
        p.running_mean = Tensor(
            ((1.0 - m) * p.running_mean.data + m * mean).astype(x.dtype))
        p.running_var = Tensor(
            ((1.0 - m) * p.running_var.data + m * var).astype(x.dtype))
        return Tensor(out)
    if mode == "eval":
        return Tensor(_bn_eval_core(x.data, p.gamma.data, p.beta.data,
                                    p.running_mean.data, p.running_var.data,
                                    p.eps))
    raise ValueError(f"unknown batchnorm mode {mode!r}")


def relu(x: Tensor) -> Tensor:
    return Tensor(np.maximum(x.data, 0))


def maxpool2d(x: Tensor) -> tuple[Tensor, PoolIndices]:
    if x.data.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"max pool needs even 4-d input, got shape {x.shape}")
    out, idx = K.maxpool2d_forward(x.data)
    return Tensor(out), PoolIndices(idx, (x.shape[2], x.shape[3]))


def maxunpool2d(y: Tensor, idx: PoolIndices) -> Tensor:
    if idx.offsets.shape != tuple(y.shape):
        raise ValueError(
            f"unpool indices shape {idx.offsets.shape} != input shape {y.shape}")
    h, w = idx.input_hw
    return Tensor(K.scatter_by_index(y.data, idx.offsets, h, w))


def softmax_channels(x: Tensor) -> Tensor:
    if x.data.ndim != 4 or x.shape[1] != 2:
        raise ValueError(f"softmax expects [n, 2, h, w], got {x.shape}")
    return Tensor(_softmax2_core(x.data))


def weighted_cross_entropy(probs: Tensor, target: np.ndarray,
                           weights: tuple[float, float],
                           fov: np.ndarray) -> Tensor:
    """Mean of per-pixel -w[class] * log(p[class]) over the field of view."""
    _check_wce_args(probs.data, target, fov)
    loss, _, _, _, _ = _wce_core(probs.data, target, weights, fov)
    return Tensor(loss)
