"""Numeric core: op semantics, tape replay, gradient fidelity."""

import numpy as np
import pytest

import gaitscreen.autograd as ag
from gaitscreen.autograd import Tensor
from gaitscreen.errors import DegenerateBatchError, NumericError, ShapeMismatchError


def test_tensor_basics():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    assert t.shape == (2, 2)
    assert t.data.dtype == np.float64
    assert t.grad.shape == t.data.shape
    assert Tensor(5.0).grad is None


def test_backward_needs_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with ag.tape() as t:
        y = ag.scale(x, 2.0)
        with pytest.raises(ShapeMismatchError):
            t.backward(y)


def test_tape_records_only_when_active(rng):
    x = Tensor(rng.standard_normal(4), requires_grad=True)
    y = ag.scale(x, 3.0)  # no tape
    assert not y.requires_grad
    with ag.tape() as t:
        z = ag.scale(x, 3.0)
        assert z.requires_grad
        assert len(t) == 1


def test_gradients_accumulate_across_uses(rng):
    x = Tensor(rng.standard_normal(5), requires_grad=True)
    with ag.tape() as t:
        y = ag.reduce_sum(ag.add(ag.scale(x, 2.0), ag.scale(x, 3.0)))
        t.backward(y)
    np.testing.assert_allclose(x.grad, 5.0)


def test_nested_tapes_rejected():
    with ag.tape():
        with pytest.raises(RuntimeError):
            with ag.tape():
                pass
    # the context was properly restored
    with ag.tape():
        pass


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    m = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]])
    out = ag.matmul(Tensor(np.eye(3)), m)
    np.testing.assert_array_equal(out.data, m.data)


def test_matmul_hand_computed():
    out = ag.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[2.0], [4.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeMismatchError, match=r"\(2, 3\).*\(2, 2\)"):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_matmul_gradient_matches_finite_differences(rng):
    a = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    b = Tensor(rng.standard_normal((5, 3)), requires_grad=True)

    def f(a_, b_):
        prod = ag.matmul(a_, b_)
        return ag.reduce_sum(ag.mul(prod, prod))

    assert ag.grad_check(f, [a, b]) < 1e-6


def test_matmul_broadcast_batch_gradient(rng):
    a = Tensor(rng.standard_normal((3, 4, 5)), requires_grad=True)
    b = Tensor(rng.standard_normal((5, 2)), requires_grad=True)

    def f(a_, b_):
        return ag.reduce_sum(ag.mul(ag.matmul(a_, b_), ag.matmul(a_, b_)))

    assert ag.grad_check(f, [a, b]) < 1e-6


# ---------------------------------------------------------------------------
# softmax


def test_softmax_uniform():
    out = ag.softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_softmax_large_logits_stable():
    out = ag.softmax(Tensor([1000.0, 0.0]), axis=0)
    assert np.isfinite(out.data).all()
    np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-300)


def test_softmax_simplex_and_gradient(rng):
    for _ in range(20):
        x = Tensor(rng.standard_normal(7), requires_grad=True)
        out = ag.softmax(x, axis=0)
        assert (out.data >= 0).all()
        assert abs(out.data.sum() - 1.0) < 1e-9

        def f(x_):
            y = ag.softmax(x_, axis=0)
            return ag.reduce_sum(ag.mul(y, y))

        assert ag.grad_check(f, x) < 1e-5


def test_softmax_bad_axis():
    with pytest.raises(ShapeMismatchError):
        ag.softmax(Tensor(np.ones((2, 2))), axis=5)


# ---------------------------------------------------------------------------
# conv2d / maxpool


def test_conv2d_1x1_ones_kernel_sums_channels(rng):
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    k = Tensor(np.ones((1, 3, 1, 1)))
    out = ag.conv2d(x, k)
    np.testing.assert_allclose(out.data[:, 0], x.data.sum(axis=1), atol=1e-12)


def test_conv2d_zero_input_zero_output():
    x = Tensor(np.zeros((1, 1, 5, 5)))
    k = Tensor(np.ones((2, 1, 3, 3)))
    assert np.all(ag.conv2d(x, k).data == 0.0)


def test_conv2d_stride2_window_sums(rng):
    """2x2 ones kernel at stride 2 must equal directly computed window sums."""
    x = rng.standard_normal((1, 1, 4, 4))
    out = ag.conv2d(Tensor(x), Tensor(np.ones((1, 1, 2, 2))), stride=2)
    expected = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            expected[i, j] = x[0, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2].sum()
    np.testing.assert_allclose(out.data[0, 0], expected, atol=1e-12)


def test_conv2d_kernel_too_large():
    with pytest.raises(ShapeMismatchError, match="larger than padded input"):
        ag.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))))


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeMismatchError, match="channel mismatch"):
        ag.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_conv2d_gradients(rng):
    x = Tensor(rng.standard_normal((2, 2, 5, 6)), requires_grad=True)
    k = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal(3), requires_grad=True)

    def f(x_, k_, b_):
        y = ag.conv2d(x_, k_, bias=b_, stride=1, padding=1)
        return ag.reduce_sum(ag.mul(y, y))

    assert ag.grad_check(f, [x, k, b]) < 1e-6


def test_maxpool_forward_and_gradient(rng):
    x = rng.standard_normal((2, 2, 6, 8))
    out = ag.maxpool2d(Tensor(x))
    expected = x.reshape(2, 2, 3, 2, 4, 2).max(axis=(3, 5))
    np.testing.assert_array_equal(out.data, expected)

    xt = Tensor(x, requires_grad=True)

    def f(x_):
        y = ag.maxpool2d(x_)
        return ag.reduce_sum(ag.mul(y, y))

    assert ag.grad_check(f, xt) < 1e-6


def test_maxpool_odd_dims_dropped(rng):
    out = ag.maxpool2d(Tensor(rng.standard_normal((1, 1, 5, 7))))
    assert out.shape == (1, 1, 2, 3)


# ---------------------------------------------------------------------------
# batchnorm


def test_batchnorm_normalizes_batch(rng):
    x = Tensor(rng.standard_normal((512, 4)))
    gamma = Tensor(np.ones(4))
    beta = Tensor(np.zeros(4))
    out = ag.batchnorm(x, gamma, beta, ag.BatchNormState(4), train=True)
    assert np.abs(out.data.mean(axis=0)).max() < 1e-9
    np.testing.assert_allclose(out.data.var(axis=0), 1.0, atol=1e-3)


def test_batchnorm_constant_column_is_zero():
    x = Tensor(np.full((8, 2), 3.7))
    out = ag.batchnorm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)),
                       ag.BatchNormState(2), train=True)
    np.testing.assert_array_equal(out.data, 0.0)


def test_batchnorm_degenerate_batch():
    with pytest.raises(DegenerateBatchError):
        ag.batchnorm(Tensor(np.ones((1, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                     ag.BatchNormState(2), train=True)


def test_batchnorm_running_stats_and_eval(rng):
    state = ag.BatchNormState(3)
    x = rng.standard_normal((16, 3)) * 2.0 + 5.0
    gamma, beta = Tensor(np.ones(3)), Tensor(np.zeros(3))
    ag.batchnorm(Tensor(x), gamma, beta, state, train=True)
    np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=0), atol=1e-12)
    out1 = ag.batchnorm(Tensor(x), gamma, beta, state, train=False)
    out2 = ag.batchnorm(Tensor(x), gamma, beta, state, train=False)
    np.testing.assert_array_equal(out1.data, out2.data)


def test_batchnorm_gradient(rng):
    x = Tensor(rng.standard_normal((8, 4)), requires_grad=True)
    gamma = Tensor(rng.standard_normal(4) + 1.5, requires_grad=True)
    beta = Tensor(rng.standard_normal(4), requires_grad=True)
    state = ag.BatchNormState(4)

    def f(x_, g_, b_):
        y = ag.batchnorm(x_, g_, b_, state, train=True)
        return ag.reduce_sum(ag.mul(y, y))

    assert ag.grad_check(f, [x, gamma, beta]) < 1e-5


# ---------------------------------------------------------------------------
# other primitives


@pytest.mark.parametrize("op_name", [
    "relu", "sqrt", "clamp", "mean", "max", "transpose", "reshape",
    "concat", "take_range", "take_pairs",
])
def test_primitive_gradients_on_random_inputs(op_name, rng):
    """Central differences at 1e-5 within 1e-5, over 20 random draws."""
    for _ in range(20):
        x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        if op_name == "relu":
            # keep values away from the kink
            x.data[np.abs(x.data) < 1e-3] += 0.1
            f = lambda a: ag.reduce_sum(ag.mul(ag.relu(a), ag.relu(a)))
        elif op_name == "sqrt":
            x = Tensor(rng.uniform(0.5, 3.0, (4, 6)), requires_grad=True)
            f = lambda a: ag.reduce_sum(ag.sqrt(a))
        elif op_name == "clamp":
            x.data[np.abs(x.data - 0.5) < 1e-3] += 0.1
            f = lambda a: ag.reduce_sum(ag.mul(ag.clamp_min(a, 0.5), ag.clamp_min(a, 0.5)))
        elif op_name == "mean":
            f = lambda a: ag.reduce_sum(ag.mul(ag.reduce_mean(a, axis=1), ag.reduce_mean(a, axis=1)))
        elif op_name == "max":
            f = lambda a: ag.reduce_sum(ag.mul(ag.reduce_max(a, axis=0), ag.reduce_max(a, axis=0)))
        elif op_name == "transpose":
            f = lambda a: ag.reduce_sum(ag.mul(ag.transpose(a, (1, 0)), ag.transpose(a, (1, 0))))
        elif op_name == "reshape":
            f = lambda a: ag.reduce_sum(ag.mul(ag.reshape(a, (2, 12)), ag.reshape(a, (2, 12))))
        elif op_name == "concat":
            f = lambda a: ag.reduce_sum(ag.mul(ag.concat([a, a], axis=1), ag.concat([a, a], axis=1)))
        elif op_name == "take_range":
            f = lambda a: ag.reduce_sum(ag.mul(ag.take_range(a, 1, 3), ag.take_range(a, 1, 3)))
        else:
            rows, cols = [0, 1, 3, 3], [2, 5, 0, 0]
            f = lambda a: ag.reduce_sum(ag.mul(ag.take_pairs(a, rows, cols),
                                               ag.take_pairs(a, rows, cols)))
        assert ag.grad_check(f, x) < 1e-5


def test_chain_rule_composition(rng):
    """Backward through a two-op chain equals the hand-derived product rule."""
    x = Tensor(rng.standard_normal(6), requires_grad=True)
    with ag.tape() as t:
        y = ag.softmax(ag.scale(x, 2.0), axis=0)
        t.backward(ag.reduce_sum(ag.mul(y, y)))
    chained = x.grad.copy()

    p = np.exp(2 * x.data - (2 * x.data).max())
    p /= p.sum()
    dy = 2 * p
    manual = 2.0 * p * (dy - np.dot(dy, p))
    np.testing.assert_allclose(chained, manual, atol=1e-12)


def test_determinism_bit_identical(rng):
    seed_data = rng.standard_normal((5, 5))

    def run():
        x = Tensor(seed_data.copy(), requires_grad=True)
        with ag.tape() as t:
            y = ag.softmax(ag.matmul(x, x), axis=1)
            t.backward(ag.reduce_sum(ag.mul(y, y)))
        return x.grad.copy()

    np.testing.assert_array_equal(run(), run())


# ---------------------------------------------------------------------------
# grad_check harness


def test_grad_check_sum_of_inputs(rng):
    x = Tensor(rng.standard_normal(8), requires_grad=True)
    err = ag.grad_check(lambda a: ag.reduce_sum(a), x)
    assert err < 1e-10
    np.testing.assert_array_equal(x.grad, np.ones(8))


def test_grad_check_quadratic():
    x = Tensor([1.0, 2.0], requires_grad=True)
    err = ag.grad_check(lambda a: ag.reduce_sum(ag.mul(a, a)), x, step=1e-5)
    assert err < 1e-8
    np.testing.assert_allclose(x.grad, [2.0, 4.0], atol=1e-12)


def test_grad_check_rejects_nonfinite():
    x = Tensor([1.0], requires_grad=True)
    with pytest.raises(NumericError):
        ag.grad_check(lambda a: ag.scale(a, np.inf), x)
