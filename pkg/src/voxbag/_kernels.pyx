# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_kernels_py``.

Same signatures and return conventions; see that module for the contracts.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col3d(floating[:, :, :, :, ::1] xp, int kd, int kh, int kw, int sd, int sh, int sw):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t od = (xp.shape[2] - kd) // sd + 1
    cdef Py_ssize_t oh = (xp.shape[3] - kh) // sh + 1
    cdef Py_ssize_t ow = (xp.shape[4] - kw) // sw + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, c * kd * kh * kw, od * oh * ow), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, a, e, f, z, y, x, row, col
    with nogil:
        for b in range(n):
            for ch in range(c):
                for a in range(kd):
                    for e in range(kh):
                        for f in range(kw):
                            row = ((ch * kd + a) * kh + e) * kw + f
                            col = 0
                            for z in range(od):
                                for y in range(oh):
                                    for x in range(ow):
                                        out[b, row, col] = xp[b, ch, z * sd + a, y * sh + e, x * sw + f]
                                        col += 1
    return out_arr


def col2im3d(floating[:, :, ::1] cols, padded_shape, int kd, int kh, int kw, int sd, int sh, int sw):
    cdef Py_ssize_t n = padded_shape[0], c = padded_shape[1]
    cdef Py_ssize_t dp = padded_shape[2], hp = padded_shape[3], wp = padded_shape[4]
    cdef Py_ssize_t od = (dp - kd) // sd + 1
    cdef Py_ssize_t oh = (hp - kh) // sh + 1
    cdef Py_ssize_t ow = (wp - kw) // sw + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros(tuple(padded_shape), dtype=dtype)
    cdef floating[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, a, e, f, z, y, x, row, col
    with nogil:
        for b in range(n):
            for ch in range(c):
                for a in range(kd):
                    for e in range(kh):
                        for f in range(kw):
                            row = ((ch * kd + a) * kh + e) * kw + f
                            col = 0
                            for z in range(od):
                                for y in range(oh):
                                    for x in range(ow):
                                        out[b, ch, z * sd + a, y * sh + e, x * sw + f] += cols[b, row, col]
                                        col += 1
    return out_arr


def maxpool3d_forward(floating[:, :, :, :, ::1] x, int pd, int ph, int pw, int sd, int sh, int sw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t d = x.shape[2], h = x.shape[3], w = x.shape[4]
    cdef Py_ssize_t od = (d - pd) // sd + 1
    cdef Py_ssize_t oh = (h - ph) // sh + 1
    cdef Py_ssize_t ow = (w - pw) // sw + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, c, od, oh, ow), dtype=dtype)
    idx_arr = np.empty((n, c, od, oh, ow), dtype=np.int64)
    cdef floating[:, :, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, ch, z, y, xx, a, e, f, zi, yi, xi
    cdef cnp.int64_t best_i
    cdef floating best, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for z in range(od):
                    for y in range(oh):
                        for xx in range(ow):
                            best = x[b, ch, z * sd, y * sh, xx * sw]
                            best_i = ((z * sd) * h + y * sh) * w + xx * sw
                            for a in range(pd):
                                zi = z * sd + a
                                for e in range(ph):
                                    yi = y * sh + e
                                    for f in range(pw):
                                        xi = xx * sw + f
                                        v = x[b, ch, zi, yi, xi]
                                        if v > best:
                                            best = v
                                            best_i = (zi * h + yi) * w + xi
                            out[b, ch, z, y, xx] = best
                            idx[b, ch, z, y, xx] = best_i
    return out_arr, idx_arr


def maxpool3d_backward(floating[:, :, :, :, ::1] dout, cnp.int64_t[:, :, :, :, ::1] argmax, in_shape):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1]
    cdef Py_ssize_t od = dout.shape[2], oh = dout.shape[3], ow = dout.shape[4]
    cdef Py_ssize_t spatial = in_shape[2] * in_shape[3] * in_shape[4]
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.zeros((n, c, spatial), dtype=dtype)
    cdef floating[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, ch, z, y, x
    with nogil:
        for b in range(n):
            for ch in range(c):
                for z in range(od):
                    for y in range(oh):
                        for x in range(ow):
                            dx[b, ch, argmax[b, ch, z, y, x]] += dout[b, ch, z, y, x]
    return dx_arr.reshape(tuple(in_shape))


def split_scores(floating[:, :] X, cnp.int64_t[::1] y, double[::1] w, features, int n_classes):
    cdef Py_ssize_t m = X.shape[0]
    cdef Py_ssize_t nf = len(features)
    cdef Py_ssize_t width = m - 1 if m > 1 else 0
    scores_arr = np.full((nf, width), -np.inf)
    thr_arr = np.zeros((nf, width))
    if m < 2:
        return scores_arr, thr_arr
    cdef double[:, ::1] scores = scores_arr
    cdef double[:, ::1] thr = thr_arr
    cdef double[::1] total = np.zeros(n_classes)
    cdef double[::1] left = np.zeros(n_classes)
    cdef double[::1] vs = np.empty(m)
    cdef cnp.int64_t[::1] order
    cdef cnp.int64_t[::1] feats = np.asarray(features, dtype=np.int64)
    cdef Py_ssize_t i, j, k, s
    cdef double nl, nr, sl, sr, rk
    for i in range(m):
        total[y[i]] += w[i]
    for j in range(nf):
        col = np.asarray(X[:, feats[j]], dtype=np.float64)
        order = np.argsort(col, kind="stable")
        for k in range(n_classes):
            left[k] = 0.0
        with nogil:
            for i in range(m):
                vs[i] = X[order[i], feats[j]]
            for i in range(m - 1):
                s = order[i]
                left[y[s]] += w[s]
                thr[j, i] = (vs[i] + vs[i + 1]) * 0.5
                if vs[i] == vs[i + 1]:
                    continue
                nl = 0.0
                nr = 0.0
                sl = 0.0
                sr = 0.0
                for k in range(n_classes):
                    nl += left[k]
                    rk = total[k] - left[k]
                    nr += rk
                    sl += left[k] * left[k]
                    sr += rk * rk
                scores[j, i] = sl / nl + sr / nr
    return scores_arr, thr_arr
