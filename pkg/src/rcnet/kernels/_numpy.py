"""Pure-numpy implementations of the hot inner kernels.

Convolutions run as patch-matrix contractions (tensordot over sliding-window
views), pooling as reshaped window reductions.  All functions take and return
plain ndarrays; padding and bias handling live in the caller so that this
module and the numba twin stay drop-in interchangeable.

Conventions: activations are [N, C, H, W]; kernels are [Cout, Cin, kh, kw];
pool indices are int64 flat offsets (r * W + c) into each [H, W] plane.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(xp, w):
    """Valid cross-correlation of a pre-padded input with a filter bank."""
    # view: [N, Cin, Ho, Wo, kh, kw]
    view = sliding_window_view(xp, (w.shape[2], w.shape[3]), axis=(2, 3))
    out = np.tensordot(view, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward_kernel(xp, go):
    """Gradient w.r.t. the filter bank; xp is the padded forward input."""
    kh = xp.shape[2] - go.shape[2] + 1
    kw = xp.shape[3] - go.shape[3] + 1
    view = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # sum over batch and output positions -> [Cout, Cin, kh, kw]
    gw = np.tensordot(go, view, axes=([0, 2, 3], [0, 2, 3]))
    return np.ascontiguousarray(gw)


def conv2d_backward_input(w, go, hp, wp):
    """Gradient w.r.t. the padded input, shape [N, Cin, hp, wp]."""
    n, _, ho, wo = go.shape
    gxp = np.zeros((n, w.shape[1], hp, wp), dtype=go.dtype)
    for ky in range(w.shape[2]):
        for kx in range(w.shape[3]):
            contrib = np.einsum("ncyx,cd->ndyx", go, w[:, :, ky, kx])
            gxp[:, :, ky:ky + ho, kx:kx + wo] += contrib
    return gxp


def maxpool2d_forward(x):
    """2x2 stride-2 max pool; ties go to the first element in row-major order.

    Returns (pooled, idx) with idx holding flat r*W+c offsets of each argmax.
    """
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    k = win.argmax(axis=4)  # first occurrence on ties
    out = np.take_along_axis(win, k[..., None], axis=4)[..., 0]
    ys = 2 * np.arange(h // 2, dtype=np.int64)[None, None, :, None] + k // 2
    xs = 2 * np.arange(w // 2, dtype=np.int64)[None, None, None, :] + k % 2
    idx = ys * w + xs
    return np.ascontiguousarray(out), np.ascontiguousarray(idx)


def scatter_by_index(y, idx, h, w):
    """Place y's values at flat offsets idx inside zeroed [N, C, h, w] planes.

    This is both the unpool forward and the pool backward.
    """
    n, c = y.shape[0], y.shape[1]
    out = np.zeros((n, c, h * w), dtype=y.dtype)
    np.put_along_axis(out, idx.reshape(n, c, -1), y.reshape(n, c, -1), axis=2)
    return out.reshape(n, c, h, w)


def gather_by_index(g, idx):
    """Read g at flat offsets idx; unpool backward. Result matches idx's shape."""
    n, c = g.shape[0], g.shape[1]
    flat = g.reshape(n, c, -1)
    out = np.take_along_axis(flat, idx.reshape(n, c, -1), axis=2)
    return np.ascontiguousarray(out.reshape(idx.shape))
