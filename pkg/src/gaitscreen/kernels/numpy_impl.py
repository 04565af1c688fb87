"""Pure-numpy reference kernels.

Same call contracts as ``numba_impl``; used when the env flag
``GAITSCREEN_BACKEND=numpy`` is set or numba is unavailable. Correctness
reference for the jitted backend (see tests/test_kernels.py).
"""

import numpy as np

BACKEND_NAME = "numpy"


def conv2d_forward(x, w, stride):
    """Cross-correlate padded input x [N,C,H,W] with w [Co,C,kh,kw].

    Padding is applied by the caller; output is [N,Co,Ho,Wo] with
    Ho = (H-kh)//stride + 1. Uses im2col + one matmul per batch.
    """
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho = (h - kh) // stride + 1
    wo = (wd - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = x[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride]
    cols = cols.reshape(n, c * kh * kw, ho * wo)
    out = np.matmul(w.reshape(co, -1), cols)
    return np.ascontiguousarray(out.reshape(n, co, ho, wo))


def conv2d_backward_x(dy, w, stride, x_shape):
    """Gradient wrt the (padded) input. dy is [N,Co,Ho,Wo]."""
    n, c, h, wd = x_shape
    co, _, kh, kw = w.shape
    ho, wo = dy.shape[2], dy.shape[3]
    dx = np.zeros(x_shape, dtype=np.float64)
    # scatter each kernel tap: dx[., c, i*s+u, j*s+v] += dy[., co, i, j] * w[co, c, u, v]
    contrib = np.einsum("nohw,ocuv->nchwuv", dy, w, optimize=True)
    for u in range(kh):
        for v in range(kw):
            dx[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += contrib[:, :, :, :, u, v]
    return dx


def conv2d_backward_w(x, dy, stride, w_shape):
    """Gradient wrt the kernel. x is the padded input."""
    co, c, kh, kw = w_shape
    ho, wo = dy.shape[2], dy.shape[3]
    dw = np.empty(w_shape, dtype=np.float64)
    dyf = dy.reshape(dy.shape[0], co, -1)
    for u in range(kh):
        for v in range(kw):
            patch = x[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride]
            patch = patch.reshape(x.shape[0], c, -1)
            dw[:, :, u, v] = np.einsum("nop,ncp->oc", dyf, patch, optimize=True)
    return dw


def maxpool2x2_forward(x):
    """2x2/stride-2 max pool of x [N,C,H,W]; odd trailing rows/cols dropped.

    Returns (out, idx) where idx holds, per output element, the flat offset
    of the winning input pixel inside its (n, c) plane. Ties resolve to the
    first element in row-major window order.
    """
    n, c, h, wd = x.shape
    ho, wo = h // 2, wd // 2
    xc = x[:, :, :2 * ho, :2 * wo]
    windows = np.stack(
        [xc[:, :, 0::2, 0::2], xc[:, :, 0::2, 1::2], xc[:, :, 1::2, 0::2], xc[:, :, 1::2, 1::2]],
        axis=-1,
    )
    k = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, k[..., None], axis=-1)[..., 0]
    ii = np.arange(ho)[:, None] * 2 + (k >> 1)
    jj = np.arange(wo)[None, :] * 2 + (k & 1)
    idx = ii * wd + jj
    return np.ascontiguousarray(out), np.ascontiguousarray(idx.astype(np.int64))


def maxpool2x2_backward(dy, idx, h, w):
    """Scatter dy back to the argmax positions recorded by the forward."""
    n, c = dy.shape[0], dy.shape[1]
    dx = np.zeros((n, c, h * w), dtype=np.float64)
    flat_idx = idx.reshape(n, c, -1)
    np.put_along_axis(dx, flat_idx, dy.reshape(n, c, -1), axis=2)
    return dx.reshape(n, c, h, w)


def dtw_pair(a, b):
    """DTW distance between vector sequences a [n,d] and b [m,d].

    Classic unconstrained DP with Euclidean local cost and steps
    (i-1,j), (i,j-1), (i-1,j-1) anchored at (0,0).
    """
    diff = a[:, None, :] - b[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=2))
    n, m = cost.shape
    cum = np.full((n, m), np.inf)
    cum[0, 0] = cost[0, 0]
    for j in range(1, m):
        cum[0, j] = cost[0, j] + cum[0, j - 1]
    for i in range(1, n):
        cum[i, 0] = cost[i, 0] + cum[i - 1, 0]
        for j in range(1, m):
            cum[i, j] = cost[i, j] + min(cum[i - 1, j], cum[i, j - 1], cum[i - 1, j - 1])
    return float(cum[n - 1, m - 1])


def dtw_matrix(feats):
    """All-pairs DTW over rows of feats [S,R], each row a scalar sequence."""
    s = feats.shape[0]
    d = np.zeros((s, s), dtype=np.float64)
    cols = feats[:, :, None]
    for i in range(s):
        for j in range(i + 1, s):
            v = dtw_pair(cols[i], cols[j])
            d[i, j] = v
            d[j, i] = v
    return d
