"""Backend equivalence: the jitted kernels must match the numpy reference."""

import numpy as np
import pytest

from gaitscreen.kernels import numba_impl, numpy_impl


@pytest.mark.parametrize("n,c,co,h,w,stride", [
    (2, 1, 3, 8, 8, 1),
    (3, 4, 2, 9, 11, 1),
    (2, 2, 5, 10, 7, 2),
    (1, 3, 3, 5, 5, 3),
])
def test_conv_forward_backends_agree(n, c, co, h, w, stride, rng):
    x = rng.standard_normal((n, c, h, w))
    k = rng.standard_normal((co, c, 3, 3))
    a = numba_impl.conv2d_forward(x, k, stride)
    b = numpy_impl.conv2d_forward(x, k, stride)
    np.testing.assert_allclose(a, b, atol=1e-11)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_backward_backends_agree(stride, rng):
    x = rng.standard_normal((2, 3, 9, 8))
    k = rng.standard_normal((4, 3, 3, 3))
    ho = (9 - 3) // stride + 1
    wo = (8 - 3) // stride + 1
    dy = rng.standard_normal((2, 4, ho, wo))
    np.testing.assert_allclose(
        numba_impl.conv2d_backward_x(dy, k, stride, x.shape),
        numpy_impl.conv2d_backward_x(dy, k, stride, x.shape), atol=1e-11)
    np.testing.assert_allclose(
        numba_impl.conv2d_backward_w(x, dy, stride, k.shape),
        numpy_impl.conv2d_backward_w(x, dy, stride, k.shape), atol=1e-11)


def test_maxpool_backends_agree_including_ties(rng):
    x = rng.standard_normal((2, 3, 6, 8))
    # force ties inside some windows; both backends must pick the same winner
    x[0, 0, 0, 0] = x[0, 0, 0, 1] = 2.0
    x[1, 2, 4:6, 2:4] = 0.5
    out_a, idx_a = numba_impl.maxpool2x2_forward(x)
    out_b, idx_b = numpy_impl.maxpool2x2_forward(x)
    np.testing.assert_array_equal(out_a, out_b)
    np.testing.assert_array_equal(idx_a, idx_b)
    dy = rng.standard_normal(out_a.shape)
    np.testing.assert_array_equal(
        numba_impl.maxpool2x2_backward(dy, idx_a, 6, 8),
        numpy_impl.maxpool2x2_backward(dy, idx_b, 6, 8))


def test_dtw_backends_agree(rng):
    for _ in range(30):
        a = rng.standard_normal((int(rng.integers(1, 7)), 2))
        b = rng.standard_normal((int(rng.integers(1, 7)), 2))
        va = numba_impl.dtw_pair(np.ascontiguousarray(a), np.ascontiguousarray(b))
        vb = numpy_impl.dtw_pair(a, b)
        assert abs(va - vb) < 1e-10


def test_dtw_matrix_backends_agree(rng):
    feats = rng.uniform(0, 1, (12, 6))
    np.testing.assert_allclose(numba_impl.dtw_matrix(feats),
                               numpy_impl.dtw_matrix(feats), atol=1e-11)
