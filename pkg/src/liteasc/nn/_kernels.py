"""Inner loops for 3x3 depthwise convolution, 2x2 max pooling and batch norm.

Every kernel has a vectorised numpy version and a numba ``@njit`` version
with identical semantics. Setting ``LITEASC_NUMBA=0`` in the environment
(or running without numba installed) selects the numpy path at import time.
Convolution and pooling arrays are batched NHWC; batch-norm kernels work on
a ``(rows, channels)`` view of the same memory.
"""

import os

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("LITEASC_NUMBA", "1").strip().lower() not in (
    "0", "false", "no", "off")


# -- numpy ----------------------------------------------------------------------

def depthwise_forward_np(x, k, b):
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.empty_like(x)
    out[...] = b
    for dh in range(3):
        for dw in range(3):
            out += xp[:, dh:dh + h, dw:dw + w, :] * k[dh, dw]
    return out


def depthwise_backward_np(x, k, g):
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    dxp = np.zeros_like(xp)
    dk = np.empty_like(k)
    for dh in range(3):
        for dw in range(3):
            dk[dh, dw] = np.sum(xp[:, dh:dh + h, dw:dw + w, :] * g, axis=(0, 1, 2))
            dxp[:, dh:dh + h, dw:dw + w, :] += g * k[dh, dw]
    db = g.sum(axis=(0, 1, 2))
    return dxp[:, 1:h + 1, 1:w + 1, :], dk, db


def _windows(x):
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    v = x[:, :2 * h2, :2 * w2, :].reshape(n, h2, 2, w2, 2, c)
    # window order: (0,0), (0,1), (1,0), (1,1)
    return v.transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)


def maxpool_forward_np(x):
    win = _windows(x)
    idx = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, idx


def maxpool_backward_np(g, idx, in_shape):
    n, h, w, c = in_shape
    h2, w2 = g.shape[1], g.shape[2]
    onehot = (idx[..., None] == np.arange(4, dtype=np.int8)) * g[..., None]
    block = onehot.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros(in_shape, dtype=g.dtype)
    dx[:, :2 * h2, :2 * w2, :] = block.reshape(n, 2 * h2, 2 * w2, c)
    return dx


def bn_train_forward_np(x2, gamma, beta, eps):
    mean = x2.mean(axis=0)
    var = x2.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x2 - mean) * inv_std
    return gamma * xhat + beta, xhat, mean, var, inv_std


def bn_backward_np(g2, xhat2, gamma, inv_std, train):
    dgamma = np.sum(g2 * xhat2, axis=0)
    dbeta = g2.sum(axis=0)
    if not train:
        return g2 * (gamma * inv_std), dgamma, dbeta
    m = g2.shape[0]
    dx = (gamma * inv_std / m) * (m * g2 - dbeta - xhat2 * dgamma)
    return dx, dgamma, dbeta


# -- numba ----------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def depthwise_forward_nb(x, k, b):
        n, h, w, c = x.shape
        out = np.empty_like(x)
        for i in range(n):
            for r in range(h):
                for s in range(w):
                    for ch in range(c):
                        acc = b[ch]
                        for dh in range(3):
                            rr = r + dh - 1
                            if rr < 0 or rr >= h:
                                continue
                            for dw in range(3):
                                ss = s + dw - 1
                                if ss < 0 or ss >= w:
                                    continue
                                acc += x[i, rr, ss, ch] * k[dh, dw, ch]
                        out[i, r, s, ch] = acc
        return out

    @njit(cache=True)
    def depthwise_backward_nb(x, k, g):
        n, h, w, c = x.shape
        dx = np.zeros_like(x)
        dk = np.zeros(k.shape)
        db = np.zeros(c)
        for i in range(n):
            for r in range(h):
                for s in range(w):
                    for ch in range(c):
                        gv = g[i, r, s, ch]
                        db[ch] += gv
                        for dh in range(3):
                            rr = r + dh - 1
                            if rr < 0 or rr >= h:
                                continue
                            for dw in range(3):
                                ss = s + dw - 1
                                if ss < 0 or ss >= w:
                                    continue
                                dk[dh, dw, ch] += x[i, rr, ss, ch] * gv
                                dx[i, rr, ss, ch] += k[dh, dw, ch] * gv
        return dx, dk.astype(k.dtype), db.astype(g.dtype)

    @njit(cache=True)
    def maxpool_forward_nb(x):
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        out = np.empty((n, h2, w2, c), dtype=x.dtype)
        idx = np.empty((n, h2, w2, c), dtype=np.int8)
        for i in range(n):
            for r in range(h2):
                for s in range(w2):
                    for ch in range(c):
                        best = x[i, 2 * r, 2 * s, ch]
                        arg = 0
                        for q in range(1, 4):
                            v = x[i, 2 * r + q // 2, 2 * s + q % 2, ch]
                            if v > best:
                                best = v
                                arg = q
                        out[i, r, s, ch] = best
                        idx[i, r, s, ch] = arg
        return out, idx

    @njit(cache=True)
    def maxpool_backward_nb(g, idx, dx):
        n, h2, w2, c = g.shape
        for i in range(n):
            for r in range(h2):
                for s in range(w2):
                    for ch in range(c):
                        q = idx[i, r, s, ch]
                        dx[i, 2 * r + q // 2, 2 * s + q % 2, ch] = g[i, r, s, ch]
        return dx

    @njit(cache=True)
    def bn_train_forward_nb(x2, gamma, beta, eps):
        m, c = x2.shape
        mean = np.zeros(c)
        var = np.zeros(c)
        for i in range(m):
            for ch in range(c):
                mean[ch] += x2[i, ch]
        mean /= m
        for i in range(m):
            for ch in range(c):
                d = x2[i, ch] - mean[ch]
                var[ch] += d * d
        var /= m
        inv_std = (1.0 / np.sqrt(var + eps)).astype(x2.dtype)
        xhat = np.empty_like(x2)
        y = np.empty_like(x2)
        for i in range(m):
            for ch in range(c):
                v = (x2[i, ch] - mean[ch]) * inv_std[ch]
                xhat[i, ch] = v
                y[i, ch] = gamma[ch] * v + beta[ch]
        return y, xhat, mean.astype(x2.dtype), var.astype(x2.dtype), inv_std

    @njit(cache=True)
    def bn_backward_nb(g2, xhat2, gamma, inv_std, train):
        m, c = g2.shape
        acc_gamma = np.zeros(c)
        acc_beta = np.zeros(c)
        for i in range(m):
            for ch in range(c):
                acc_gamma[ch] += g2[i, ch] * xhat2[i, ch]
                acc_beta[ch] += g2[i, ch]
        dgamma = acc_gamma.astype(g2.dtype)
        dbeta = acc_beta.astype(g2.dtype)
        dx = np.empty_like(g2)
        scale = gamma * inv_std
        if train:
            for i in range(m):
                for ch in range(c):
                    dx[i, ch] = scale[ch] / m * (m * g2[i, ch] - dbeta[ch] - xhat2[i, ch] * dgamma[ch])
        else:
            for i in range(m):
                for ch in range(c):
                    dx[i, ch] = g2[i, ch] * scale[ch]
        return dx, dgamma, dbeta


# -- dispatch -------------------------------------------------------------------

def depthwise_forward(x, k, b):
    if USE_NUMBA:
        return depthwise_forward_nb(np.ascontiguousarray(x), k, b)
    return depthwise_forward_np(x, k, b)


def depthwise_backward(x, k, g):
    if USE_NUMBA:
        return depthwise_backward_nb(np.ascontiguousarray(x), k, np.ascontiguousarray(g))
    return depthwise_backward_np(x, k, g)


def maxpool_forward(x):
    if USE_NUMBA:
        return maxpool_forward_nb(np.ascontiguousarray(x))
    return maxpool_forward_np(x)


def maxpool_backward(g, idx, in_shape):
    if USE_NUMBA:
        dx = np.zeros(in_shape, dtype=g.dtype)
        return maxpool_backward_nb(np.ascontiguousarray(g), idx, dx)
    return maxpool_backward_np(g, idx, in_shape)


def bn_train_forward(x2, gamma, beta, eps):
    if USE_NUMBA:
        return bn_train_forward_nb(np.ascontiguousarray(x2), gamma, beta, eps)
    return bn_train_forward_np(x2, gamma, beta, eps)


def bn_backward(g2, xhat2, gamma, inv_std, train):
    if USE_NUMBA:
        return bn_backward_nb(np.ascontiguousarray(g2), xhat2, gamma, inv_std, train)
    return bn_backward_np(g2, xhat2, gamma, inv_std, train)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
