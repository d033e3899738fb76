"""Layer forward and backward passes on NHWC arrays.

Functions take a batch ``(N, H, W, C)``; the convolution and pooling entry
points also accept a single ``(H, W, C)`` tensor. Backward functions return
the input gradient first, followed by parameter gradients in argument order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import _kernels

BN_EPS = 1e-3
BN_MOMENTUM = 0.99


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected an (H, W, C) or (N, H, W, C) array, got shape {x.shape}")
    return x, False


def _unbatch(y, single):
    return y[0] if single else y


# -- frequency split ------------------------------------------------------------

def split_frequency(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Cut the mel axis (H) in half: rows ``[0, H/2)`` and ``[H/2, H)``."""
    axis = x.ndim - 3
    h = x.shape[axis]
    if h % 2:
        raise ValueError(f"frequency axis must be even to split, got {h}")
    low, high = np.split(x, 2, axis=axis)
    return low, high


def merge_frequency(low: np.ndarray, high: np.ndarray) -> np.ndarray:
    return np.concatenate([low, high], axis=low.ndim - 3)


# -- convolutions -------------------------------------------------------------------

def pointwise_conv_forward(x, kernel, bias):
    """1x1 convolution: ``out[..., o] = sum_i x[..., i] k[i, o] + b[o]``."""
    kernel = np.asarray(kernel)
    if kernel.ndim == 4:
        kernel = kernel.reshape(kernel.shape[-2:])
    if x.shape[-1] != kernel.shape[0]:
        raise ValueError(f"input has {x.shape[-1]} channels, kernel expects {kernel.shape[0]}")
    return x @ kernel + bias


def pointwise_conv_backward(x, kernel, g):
    c_in = x.shape[-1]
    flat_x = x.reshape(-1, c_in)
    flat_g = g.reshape(-1, g.shape[-1])
    dk = flat_x.T @ flat_g
    db = flat_g.sum(axis=0)
    dx = g @ kernel.T
    return dx, dk, db


def depthwise_conv_forward(x, kernel, bias):
    """3x3 per-channel convolution, stride 1, zero-padded to the input size."""
    xb, single = _batched(x)
    if kernel.shape != (3, 3, xb.shape[-1]):
        raise ValueError(f"depthwise kernel {kernel.shape} does not fit {xb.shape[-1]} channels")
    return _unbatch(_kernels.depthwise_forward(xb, kernel, bias), single)


def depthwise_conv_backward(x, kernel, g):
    xb, single = _batched(x)
    gb, _ = _batched(g)
    dx, dk, db = _kernels.depthwise_backward(xb, kernel, gb)
    return _unbatch(dx, single), dk, db


# -- batch normalisation ------------------------------------------------------------

@dataclass
class BNCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    train: bool


def batchnorm_forward(x, gamma, beta, running_mean=None, running_var=None, mode="train",
                      eps=BN_EPS, momentum=BN_MOMENTUM):
    """Per-channel normalisation over batch and spatial axes.

    Returns ``(y, cache, (new_mean, new_var))``. In train mode the batch
    statistics normalise the input and the running averages are advanced;
    in infer mode the running statistics are used and returned unchanged.
    """
    c = x.shape[-1]
    x2 = np.ascontiguousarray(x).reshape(-1, c)
    if mode == "train":
        y2, xhat2, mean, var, inv_std = _kernels.bn_train_forward(x2, gamma, beta, eps)
        if running_mean is None:
            new_stats = (mean, var)
        else:
            new_stats = (momentum * running_mean + (1.0 - momentum) * mean,
                         momentum * running_var + (1.0 - momentum) * var)
    elif mode == "infer":
        if running_mean is None or running_var is None:
            raise ValueError("batch norm in infer mode needs running statistics")
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat2 = (x2 - running_mean) * inv_std
        y2 = gamma * xhat2 + beta
        new_stats = (running_mean, running_var)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return y2.reshape(x.shape), BNCache(xhat2, inv_std, gamma, mode == "train"), new_stats


def batchnorm_backward(g, cache: BNCache):
    g2 = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
    dx2, dgamma, dbeta = _kernels.bn_backward(g2, cache.xhat, cache.gamma, cache.inv_std, cache.train)
    return dx2.reshape(g.shape), dgamma, dbeta


# -- activations ----------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0)


def relu_backward(pre, g):
    return g * (pre > 0)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- channel attention ------------------------------------------------------------------

@dataclass
class CACache:
    x: np.ndarray
    gate: np.ndarray
    argmax: np.ndarray
    branches: tuple


def _shared_mlp(d, w1, b1, w2, b2):
    hidden = d @ w1 + b1
    return relu(hidden) @ w2 + b2, hidden


def channel_attention_forward(x, w1, b1, w2, b2, return_cache: bool = False):
    """Scale each channel by sigmoid(MLP(max-pool) + MLP(avg-pool)) with one shared MLP."""
    xb, single = _batched(x)
    n, h, w, c = xb.shape
    if w1.shape[0] != c or w2.shape[1] != c:
        raise ValueError(f"attention weights {w1.shape}/{w2.shape} do not fit {c} channels")
    if c % w1.shape[1]:
        raise ValueError(f"reduced width {w1.shape[1]} does not divide {c} channels")
    flat = xb.reshape(n, h * w, c)
    argmax = flat.argmax(axis=1)
    d_max = np.take_along_axis(flat, argmax[:, None, :], axis=1)[:, 0, :]
    d_avg = flat.mean(axis=1)
    o_max, h_max = _shared_mlp(d_max, w1, b1, w2, b2)
    o_avg, h_avg = _shared_mlp(d_avg, w1, b1, w2, b2)
    gate = sigmoid(o_max + o_avg)
    y = _unbatch(xb * gate[:, None, None, :], single)
    if not return_cache:
        return y
    return y, CACache(xb, gate, argmax, ((d_max, h_max), (d_avg, h_avg)))


def channel_attention_backward(g, cache: CACache, w1, w2):
    gb, single = _batched(g)
    n, h, w, c = gb.shape
    xb, gate = cache.x, cache.gate
    d_gate = np.sum(gb * xb, axis=(1, 2))
    d_logit = d_gate * gate * (1.0 - gate)
    dw1 = np.zeros_like(w1)
    dw2 = np.zeros_like(w2)
    db1 = np.zeros(w1.shape[1], dtype=d_logit.dtype)
    db2 = d_logit.sum(axis=0) * 2
    d_desc = []
    for d, hidden in cache.branches:
        act = relu(hidden)
        dw2 += act.T @ d_logit
        dh = relu_backward(hidden, d_logit @ w2.T)
        dw1 += d.T @ dh
        db1 += dh.sum(axis=0)
        d_desc.append(dh @ w1.T)
    dx = gb * gate[:, None, None, :]
    dx += (d_desc[1] / (h * w))[:, None, None, :]
    flat = dx.reshape(n, h * w, c)
    rows = np.arange(n)[:, None]
    cols = np.arange(c)[None, :]
    flat[rows, cache.argmax, cols] += d_desc[0]
    return _unbatch(dx, single), dw1, db1, dw2, db2


# -- pooling ----------------------------------------------------------------------------

def maxpool2d(x, return_indices: bool = False):
    """2x2 max pooling, stride 2; a trailing odd row or column is dropped."""
    xb, single = _batched(x)
    if xb.shape[1] < 2 or xb.shape[2] < 2:
        raise ValueError(f"max pooling needs H, W >= 2, got {xb.shape[1:3]}")
    out, idx = _kernels.maxpool_forward(xb)
    out = _unbatch(out, single)
    return (out, idx) if return_indices else out


def maxpool2d_backward(g, idx, in_shape):
    gb, single = _batched(g)
    shape = tuple(in_shape) if len(in_shape) == 4 else (1,) + tuple(in_shape)
    return _unbatch(_kernels.maxpool_backward(gb, idx, shape), single)


def global_avg_pool(x):
    return np.asarray(x).mean(axis=(-3, -2))


def global_avg_pool_backward(g, in_shape):
    h, w = in_shape[-3], in_shape[-2]
    return np.broadcast_to((g / (h * w))[..., None, None, :], in_shape).copy()


# -- classifier head ---------------------------------------------------------------------

def dense_forward(x, w, b):
    return x @ w + b


def dense_backward(x, w, g):
    return g @ w.T, x.T @ g, g.sum(axis=0)


def softmax_cross_entropy_backward(probs, targets):
    """Gradient of the batch-mean cross entropy with respect to the logits."""
    return (probs - targets) / probs.shape[0]

