"""Numba-jitted twins of the numpy kernels: same names, same contracts.

Plain nested loops; numba specializes per dtype (f32 for training, f64 for
gradient checking).  Compiled artifacts are cached on disk, so only the first
process pays the JIT cost.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(xp, w):
    n_, cin, hp, wp = xp.shape
    cout, _, kh, kw = w.shape
    ho = hp - kh + 1
    wo = wp - kw + 1
    out = np.zeros((n_, cout, ho, wo), dtype=xp.dtype)
    for n in range(n_):
        for co in range(cout):
            for ci in range(cin):
                for ky in range(kh):
                    for kx in range(kw):
                        wv = w[co, ci, ky, kx]
                        for y in range(ho):
                            for x in range(wo):
                                out[n, co, y, x] += wv * xp[n, ci, y + ky, x + kx]
    return out


@njit(cache=True)
def conv2d_backward_kernel(xp, go):
    n_, cin, hp, wp = xp.shape
    cout, ho, wo = go.shape[1], go.shape[2], go.shape[3]
    kh = hp - ho + 1
    kw = wp - wo + 1
    gw = np.zeros((cout, cin, kh, kw), dtype=xp.dtype)
    for n in range(n_):
        for co in range(cout):
            for ci in range(cin):
                for ky in range(kh):
                    for kx in range(kw):
                        acc = 0.0
                        for y in range(ho):
                            for x in range(wo):
                                acc += xp[n, ci, y + ky, x + kx] * go[n, co, y, x]
                        gw[co, ci, ky, kx] += acc
    return gw


@njit(cache=True)
def conv2d_backward_input(w, go, hp, wp):
    n_, cout, ho, wo = go.shape
    cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    gxp = np.zeros((n_, cin, hp, wp), dtype=go.dtype)
    for n in range(n_):
        for co in range(cout):
            for ci in range(cin):
                for ky in range(kh):
                    for kx in range(kw):
                        wv = w[co, ci, ky, kx]
                        for y in range(ho):
                            for x in range(wo):
                                gxp[n, ci, y + ky, x + kx] += wv * go[n, co, y, x]
    return gxp


@njit(cache=True)
def maxpool2d_forward(x):
    n_, c_, h, w = x.shape
    hh = h // 2
    ww = w // 2
    out = np.zeros((n_, c_, hh, ww), dtype=x.dtype)
    idx = np.zeros((n_, c_, hh, ww), dtype=np.int64)
    for n in range(n_):
        for c in range(c_):
            for y in range(hh):
                for x2 in range(ww):
                    best_r = 2 * y
                    best_c = 2 * x2
                    best = x[n, c, best_r, best_c]
                    # strict > keeps the first row-major occurrence on ties
                    for dy in range(2):
                        for dx in range(2):
                            v = x[n, c, 2 * y + dy, 2 * x2 + dx]
                            if v > best:
                                best = v
                                best_r = 2 * y + dy
                                best_c = 2 * x2 + dx
                    out[n, c, y, x2] = best
                    idx[n, c, y, x2] = best_r * w + best_c
    return out, idx


@njit(cache=True)
def scatter_by_index(y, idx, h, w):
    n_, c_, hh, ww = y.shape
    out = np.zeros((n_, c_, h, w), dtype=y.dtype)
    for n in range(n_):
        for c in range(c_):
            for i in range(hh):
                for j in range(ww):
                    off = idx[n, c, i, j]
                    out[n, c, off // w, off % w] = y[n, c, i, j]
    return out


@njit(cache=True)
def gather_by_index(g, idx):
    n_, c_, hh, ww = idx.shape
    w = g.shape[3]
    out = np.zeros((n_, c_, hh, ww), dtype=g.dtype)
    for n in range(n_):
        for c in range(c_):
            for i in range(hh):
                for j in range(ww):
                    off = idx[n, c, i, j]
                    out[n, c, i, j] = g[n, c, off // w, off % w]
    return out
