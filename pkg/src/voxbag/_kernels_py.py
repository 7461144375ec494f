"""Pure-numpy implementations of the hot kernels.

These are the fallback when the compiled ``_kernels`` extension is not
available, and the reference the compiled versions are tested against.
Copies (im2col, pooling) agree bit-for-bit across backends; accumulations
(col2im) agree to rounding.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col3d(xp, kd, kh, kw, sd, sh, sw):
    """Unfold a padded ``(N, C, D, H, W)`` array into ``(N, C*kd*kh*kw, L)``."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))
    win = win[:, :, ::sd, ::sh, ::sw]
    od, oh, ow = win.shape[2:5]
    # (N, C, od, oh, ow, kd, kh, kw) -> (N, C, kd, kh, kw, od, oh, ow)
    cols = win.transpose(0, 1, 5, 6, 7, 2, 3, 4)
    return np.ascontiguousarray(cols).reshape(n, c * kd * kh * kw, od * oh * ow)


def col2im3d(cols, padded_shape, kd, kh, kw, sd, sh, sw):
    n, c, dp, hp, wp = padded_shape
    od = (dp - kd) // sd + 1
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1
    cols = cols.reshape(n, c, kd, kh, kw, od, oh, ow)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for a in range(kd):
        for b in range(kh):
            for e in range(kw):
                out[:, :, a:a + sd * od:sd, b:b + sh * oh:sh, e:e + sw * ow:sw] += cols[:, :, a, b, e]
    return out


def maxpool3d_forward(x, pd, ph, pw, sd, sh, sw):
    """Window maxima plus the flat ``D*H*W`` index of each winner.

    Ties go to the first element of the window in row-major order.
    """
    n, c, d, h, w = x.shape
    od = (d - pd) // sd + 1
    oh = (h - ph) // sh + 1
    ow = (w - pw) // sw + 1
    win = sliding_window_view(x, (pd, ph, pw), axis=(2, 3, 4))[:, :, ::sd, ::sh, ::sw]
    win = win[:, :, :od, :oh, :ow].reshape(n, c, od, oh, ow, pd * ph * pw)
    local = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    la, rem = np.divmod(local, ph * pw)
    lb, le = np.divmod(rem, pw)
    zd = (np.arange(od) * sd)[:, None, None]
    zh = (np.arange(oh) * sh)[None, :, None]
    zw = (np.arange(ow) * sw)[None, None, :]
    flat = ((zd + la) * h + (zh + lb)) * w + (zw + le)
    return np.ascontiguousarray(out), flat.astype(np.int64)


def maxpool3d_backward(dout, argmax, in_shape):
    n, c = dout.shape[:2]
    spatial = int(np.prod(in_shape[2:]))
    dx = np.zeros((n * c, spatial), dtype=dout.dtype)
    rows = np.repeat(np.arange(n * c), argmax[0, 0].size)
    np.add.at(dx, (rows, argmax.reshape(-1)), dout.reshape(-1))
    return dx.reshape(in_shape)


def split_scores(X, y, w, features, n_classes):
    """Gini sweep over every candidate midpoint of every listed feature.

    Returns ``(scores, thresholds)`` of shape ``(len(features), m-1)`` where
    ``score = sum_c L_c^2 / nL + sum_c R_c^2 / nR`` over weighted class
    counts (larger is better). Positions between equal values get -inf.
    """
    m = X.shape[0]
    scores = np.full((len(features), max(m - 1, 0)), -np.inf)
    thresholds = np.zeros_like(scores)
    if m < 2:
        return scores, thresholds
    onehot = np.zeros((m, n_classes))
    onehot[np.arange(m), y] = w
    total = onehot.sum(axis=0)
    for j, f in enumerate(features):
        v = X[:, f].astype(np.float64)
        order = np.argsort(v, kind="stable")
        vs = v[order]
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = total - left
        nl = left.sum(axis=1)
        nr = right.sum(axis=1)
        valid = vs[:-1] != vs[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (left * left).sum(axis=1) / nl + (right * right).sum(axis=1) / nr
        scores[j] = np.where(valid, s, -np.inf)
        thresholds[j] = (vs[:-1] + vs[1:]) * 0.5
    return scores, thresholds
