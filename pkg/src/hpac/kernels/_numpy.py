"""Vectorized numpy kernels; reference path and fallback when numba is off."""

import numpy as np


def conv1d_forward(x, w):
    n, length, _ = x.shape
    width, _, d_out = w.shape
    pad = (width - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    out = np.zeros((n, length, d_out))
    for j in range(width):
        out += xp[:, j:j + length, :] @ w[j]
    return out


def conv1d_backward(x, w, g):
    n, length, d_in = x.shape
    width = w.shape[0]
    pad = (width - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    g2 = g.reshape(n * length, -1)
    for j in range(width):
        gxp[:, j:j + length, :] += g @ w[j].T
        gw[j] = xp[:, j:j + length, :].reshape(n * length, d_in).T @ g2
    return gxp[:, pad:pad + length, :], gw


def masked_softmax_forward(x, mask):
    xm = np.where(mask, x, -np.inf)
    mx = xm.max(axis=-1, keepdims=True)
    mx[~np.isfinite(mx)] = 0.0
    e = np.exp(xm - mx)
    s = e.sum(axis=-1, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def masked_softmax_backward(y, g):
    return y * (g - (g * y).sum(axis=-1, keepdims=True))


def embedding_backward(ids, g, vocab):
    out = np.zeros((vocab, g.shape[1]))
    np.add.at(out, ids, g)
    return out
