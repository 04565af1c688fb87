"""Jitted hot-loop kernels (default backend).

Matches the contracts in ``numpy_impl``; all loops are single-threaded so a
run stays on one core.
"""

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True, fastmath=True)
def _conv3x3_s1(x, w, out):
    n, c, hp, wp = x.shape
    co = w.shape[0]
    h = hp - 2
    wd = wp - 2
    for b in range(n):
        for i in range(h):
            for o in range(co):
                acc = out[b, o, i]
                for k in range(c):
                    r0 = x[b, k, i]
                    r1 = x[b, k, i + 1]
                    r2 = x[b, k, i + 2]
                    # scalar taps so the j loop runs from registers
                    w00 = w[o, k, 0, 0]; w01 = w[o, k, 0, 1]; w02 = w[o, k, 0, 2]
                    w10 = w[o, k, 1, 0]; w11 = w[o, k, 1, 1]; w12 = w[o, k, 1, 2]
                    w20 = w[o, k, 2, 0]; w21 = w[o, k, 2, 1]; w22 = w[o, k, 2, 2]
                    for j in range(wd):
                        acc[j] += (w00 * r0[j] + w01 * r0[j + 1] + w02 * r0[j + 2]
                                   + w10 * r1[j] + w11 * r1[j + 1] + w12 * r1[j + 2]
                                   + w20 * r2[j] + w21 * r2[j + 1] + w22 * r2[j + 2])


@njit(cache=True, fastmath=True)
def _conv_generic(x, w, stride, out):
    n, c, _, _ = x.shape
    co, _, kh, kw = w.shape
    ho, wo = out.shape[2], out.shape[3]
    for b in range(n):
        for o in range(co):
            for k in range(c):
                for u in range(kh):
                    for v in range(kw):
                        wv = w[o, k, u, v]
                        for i in range(ho):
                            xi = i * stride + u
                            for j in range(wo):
                                out[b, o, i, j] += wv * x[b, k, xi, j * stride + v]


def conv2d_forward(x, w, stride):
    n = x.shape[0]
    co, _, kh, kw = w.shape
    ho = (x.shape[2] - kh) // stride + 1
    wo = (x.shape[3] - kw) // stride + 1
    out = np.zeros((n, co, ho, wo), dtype=np.float64)
    if kh == 3 and kw == 3 and stride == 1:
        _conv3x3_s1(x, w, out)
    else:
        _conv_generic(x, w, stride, out)
    return out


@njit(cache=True, fastmath=True)
def _conv_backward_x_generic(dy, w, stride, dx):
    n = dy.shape[0]
    co, c, kh, kw = w.shape
    ho, wo = dy.shape[2], dy.shape[3]
    for b in range(n):
        for o in range(co):
            for k in range(c):
                for u in range(kh):
                    for v in range(kw):
                        wv = w[o, k, u, v]
                        for i in range(ho):
                            xi = i * stride + u
                            for j in range(wo):
                                dx[b, k, xi, j * stride + v] += wv * dy[b, o, i, j]


def conv2d_backward_x(dy, w, stride, x_shape):
    co, c, kh, kw = w.shape
    if kh == 3 and kw == 3 and stride == 1:
        # input gradient of a stride-1 correlation is a correlation of the
        # padded output gradient with the channel-swapped, flipped kernel
        wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dyp = np.pad(dy, ((0, 0), (0, 0), (2, 2), (2, 2)))
        return conv2d_forward(dyp, wt, 1)
    dx = np.zeros(x_shape, dtype=np.float64)
    _conv_backward_x_generic(dy, w, stride, dx)
    return dx


@njit(cache=True, fastmath=True)
def _conv_backward_w_s1(x, dy, dw):
    n = x.shape[0]
    co, c, kh, kw = dw.shape
    ho, wo = dy.shape[2], dy.shape[3]
    for b in range(n):
        for o in range(co):
            for k in range(c):
                for u in range(kh):
                    for i in range(ho):
                        dy_row = dy[b, o, i]
                        x_row = x[b, k, i + u]
                        for v in range(kw):
                            acc = 0.0
                            for j in range(wo):
                                acc += dy_row[j] * x_row[j + v]
                            dw[o, k, u, v] += acc


@njit(cache=True, fastmath=True)
def _conv_backward_w_generic(x, dy, stride, dw):
    n = x.shape[0]
    co, c, kh, kw = dw.shape
    ho, wo = dy.shape[2], dy.shape[3]
    for b in range(n):
        for o in range(co):
            for k in range(c):
                for u in range(kh):
                    for v in range(kw):
                        acc = 0.0
                        for i in range(ho):
                            xi = i * stride + u
                            for j in range(wo):
                                acc += dy[b, o, i, j] * x[b, k, xi, j * stride + v]
                        dw[o, k, u, v] += acc


def conv2d_backward_w(x, dy, stride, w_shape):
    dw = np.zeros(w_shape, dtype=np.float64)
    if stride == 1:
        _conv_backward_w_s1(x, dy, dw)
    else:
        _conv_backward_w_generic(x, dy, stride, dw)
    return dw


@njit(cache=True)
def _maxpool(x, out, idx):
    n, c, h, wd = x.shape
    ho, wo = out.shape[2], out.shape[3]
    for b in range(n):
        for k in range(c):
            for i in range(ho):
                for j in range(wo):
                    i0 = 2 * i
                    j0 = 2 * j
                    best = x[b, k, i0, j0]
                    bi = i0 * wd + j0
                    if x[b, k, i0, j0 + 1] > best:
                        best = x[b, k, i0, j0 + 1]
                        bi = i0 * wd + j0 + 1
                    if x[b, k, i0 + 1, j0] > best:
                        best = x[b, k, i0 + 1, j0]
                        bi = (i0 + 1) * wd + j0
                    if x[b, k, i0 + 1, j0 + 1] > best:
                        best = x[b, k, i0 + 1, j0 + 1]
                        bi = (i0 + 1) * wd + j0 + 1
                    out[b, k, i, j] = best
                    idx[b, k, i, j] = bi


def maxpool2x2_forward(x):
    n, c, h, wd = x.shape
    ho, wo = h // 2, wd // 2
    out = np.empty((n, c, ho, wo), dtype=np.float64)
    idx = np.empty((n, c, ho, wo), dtype=np.int64)
    _maxpool(x, out, idx)
    return out, idx


@njit(cache=True)
def _maxpool_backward(dy, idx, dx_flat):
    n, c, ho, wo = dy.shape
    for b in range(n):
        for k in range(c):
            for i in range(ho):
                for j in range(wo):
                    dx_flat[b, k, idx[b, k, i, j]] += dy[b, k, i, j]


def maxpool2x2_backward(dy, idx, h, w):
    n, c = dy.shape[0], dy.shape[1]
    dx = np.zeros((n, c, h * w), dtype=np.float64)
    _maxpool_backward(dy, idx, dx)
    return dx.reshape(n, c, h, w)


@njit(cache=True)
def dtw_pair(a, b):
    n, m = a.shape[0], b.shape[0]
    d = a.shape[1]
    cost = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                s += diff * diff
            cost[i, j] = np.sqrt(s)
    cum = np.empty((n, m), dtype=np.float64)
    cum[0, 0] = cost[0, 0]
    for j in range(1, m):
        cum[0, j] = cost[0, j] + cum[0, j - 1]
    for i in range(1, n):
        cum[i, 0] = cost[i, 0] + cum[i - 1, 0]
        for j in range(1, m):
            best = cum[i - 1, j]
            if cum[i, j - 1] < best:
                best = cum[i, j - 1]
            if cum[i - 1, j - 1] < best:
                best = cum[i - 1, j - 1]
            cum[i, j] = cost[i, j] + best
    return cum[n - 1, m - 1]


@njit(cache=True)
def _dtw_scalar_seq(a, b, cum):
    r = a.shape[0]
    cum[0, 0] = abs(a[0] - b[0])
    for j in range(1, r):
        cum[0, j] = abs(a[0] - b[j]) + cum[0, j - 1]
    for i in range(1, r):
        cum[i, 0] = abs(a[i] - b[0]) + cum[i - 1, 0]
        for j in range(1, r):
            best = cum[i - 1, j]
            if cum[i, j - 1] < best:
                best = cum[i, j - 1]
            if cum[i - 1, j - 1] < best:
                best = cum[i - 1, j - 1]
            cum[i, j] = abs(a[i] - b[j]) + best
    return cum[r - 1, r - 1]


@njit(cache=True)
def _dtw_matrix(feats, d):
    s, r = feats.shape
    cum = np.empty((r, r), dtype=np.float64)
    for i in range(s):
        for j in range(i + 1, s):
            v = _dtw_scalar_seq(feats[i], feats[j], cum)
            d[i, j] = v
            d[j, i] = v


def dtw_matrix(feats):
    s = feats.shape[0]
    d = np.zeros((s, s), dtype=np.float64)
    _dtw_matrix(feats, d)
    return d
