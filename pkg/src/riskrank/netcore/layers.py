"""Elementary differentiable pieces shared by the encoder and context layers."""

from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gelu(x):
    """tanh approximation of GELU; returns (value, derivative)."""
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    y = 0.5 * x * (1.0 + t)
    dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x2)
    return y, dy


def layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(dy, gain, cache):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=axes)
    dbias = dy.sum(axis=axes)
    dxhat = dy * gain
    m = dy.shape[-1]
    dx = inv / m * (m * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, dgain, dbias


def masked_softmax(scores, mask):
    """Softmax over the last axis restricted to ``mask``; masked entries are exactly 0.

    Rows with no unmasked entry come back all zero.
    """
    neg = np.where(mask, scores, -np.inf)
    top = neg.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(np.where(mask, scores - top, 0.0)), 0.0)
    total = e.sum(axis=-1, keepdims=True)
    return np.divide(e, total, out=np.zeros_like(e), where=total > 0)


def softmax_backward(dp, p):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


GRU_BLOCKS = ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")


def gru_cell(x, h_prev, params):
    """One GRU step; ``params`` maps the nine block names to arrays.

    Works on single vectors or on row batches.
    """
    return gru_cell_forward(x, h_prev, params)[0]


def gru_cell_forward(x, h, p):
    z = sigmoid(x @ p["wz"] + h @ p["uz"] + p["bz"])
    r = sigmoid(x @ p["wr"] + h @ p["ur"] + p["br"])
    rh = r * h
    c = np.tanh(x @ p["wh"] + rh @ p["uh"] + p["bh"])
    h_new = z * h + (1.0 - z) * c
    return h_new, (x, h, z, r, rh, c)


def gru_cell_backward(dh_new, cache, p, grads):
    """Accumulate parameter gradients into ``grads``; return (dx, dh_prev)."""
    x, h, z, r, rh, c = cache
    dz = dh_new * (h - c)
    dc = dh_new * (1.0 - z)
    dh = dh_new * z
    dah = dc * (1.0 - c * c)
    grads["wh"] += x.T @ dah
    grads["uh"] += rh.T @ dah
    grads["bh"] += dah.sum(axis=0)
    drh = dah @ p["uh"].T
    dr = drh * h
    dh += drh * r
    dx = dah @ p["wh"].T
    dar = dr * r * (1.0 - r)
    grads["wr"] += x.T @ dar
    grads["ur"] += h.T @ dar
    grads["br"] += dar.sum(axis=0)
    dh += dar @ p["ur"].T
    dx += dar @ p["wr"].T
    daz = dz * z * (1.0 - z)
    grads["wz"] += x.T @ daz
    grads["uz"] += h.T @ daz
    grads["bz"] += daz.sum(axis=0)
    dh += daz @ p["uz"].T
    dx += daz @ p["wz"].T
    return dx, dh
