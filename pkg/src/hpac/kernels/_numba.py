"""numba-compiled kernels. Same contracts as the numpy path.

The convolution is matmul-shaped and BLAS beats a compiled triple loop on
it, so this backend reuses the numpy convolution; the loop versions stay
here (``conv1d_*_loops``) for the benchmark.
"""

import math

import numpy as np
from numba import njit

from ._numpy import conv1d_backward, conv1d_forward  # noqa: F401  (BLAS path)


@njit(cache=True)
def conv1d_forward_loops(x, w):
    n, length, d_in = x.shape
    width, _, d_out = w.shape
    pad = (width - 1) // 2
    out = np.zeros((n, length, d_out))
    for b in range(n):
        for pos in range(length):
            row = out[b, pos]
            for j in range(width):
                src = pos + j - pad
                if src < 0 or src >= length:
                    continue
                for i in range(d_in):
                    xv = x[b, src, i]
                    if xv != 0.0:
                        wr = w[j, i]
                        for o in range(d_out):
                            row[o] += xv * wr[o]
    return out


@njit(cache=True)
def conv1d_backward_loops(x, w, g):
    n, length, d_in = x.shape
    width, _, d_out = w.shape
    pad = (width - 1) // 2
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for b in range(n):
        for pos in range(length):
            grow = g[b, pos]
            for j in range(width):
                src = pos + j - pad
                if src < 0 or src >= length:
                    continue
                for i in range(d_in):
                    wr = w[j, i]
                    acc = 0.0
                    for o in range(d_out):
                        acc += wr[o] * grow[o]
                    gx[b, src, i] += acc
                    xv = x[b, src, i]
                    if xv != 0.0:
                        gwr = gw[j, i]
                        for o in range(d_out):
                            gwr[o] += xv * grow[o]
    return gx, gw


@njit(cache=True)
def embedding_backward(ids, g, vocab):
    rows, dim = g.shape
    out = np.zeros((vocab, dim))
    for r in range(rows):
        dst = out[ids[r]]
        src = g[r]
        for c in range(dim):
            dst[c] += src[c]
    return out


@njit(cache=True)
def masked_softmax_forward(x, mask):
    rows, length = x.shape
    out = np.zeros_like(x)
    for r in range(rows):
        mx = -np.inf
        for c in range(length):
            if mask[r, c] and x[r, c] > mx:
                mx = x[r, c]
        if mx == -np.inf:
            continue
        s = 0.0
        for c in range(length):
            if mask[r, c]:
                e = math.exp(x[r, c] - mx)
                out[r, c] = e
                s += e
        for c in range(length):
            out[r, c] /= s
    return out


@njit(cache=True)
def masked_softmax_backward(y, g):
    rows, length = y.shape
    out = np.empty_like(y)
    for r in range(rows):
        dot = 0.0
        for c in range(length):
            dot += g[r, c] * y[r, c]
        for c in range(length):
            out[r, c] = y[r, c] * (g[r, c] - dot)
    return out
