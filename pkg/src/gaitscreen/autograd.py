"""Dense float64 tensors with tape-based reverse-mode differentiation.

A ``Tape`` records one backward closure per executed op, in execution order;
replaying them in reverse propagates gradients to every ``requires_grad``
tensor. Ops run eagerly on numpy arrays and only record when a tape is active
and some input participates in the graph, so evaluation without a tape costs
nothing extra. Gradient buffers of intermediate results are allocated on
first contribution and dropped as soon as their producer's backward rule has
run, which keeps the peak footprint near the size of the retained
activations. Hot kernels (convolution, pooling) dispatch through
``gaitscreen.kernels``.
"""

import math
from contextlib import AbstractContextManager

import numpy as np

from . import kernels
from .errors import DegenerateBatchError, NumericError, ShapeMismatchError

_ACTIVE_TAPE = None


class Tensor:
    """Dense float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() needs a scalar tensor, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={tuple(self.data.shape)}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g):
    """Add g into t's gradient buffer, copying g on first contribution."""
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _accum_owned(t: Tensor, g):
    """Like _accum but adopts g outright; g must be freshly allocated and
    unaliased (not a view of a live buffer)."""
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


class Tape(AbstractContextManager):
    """Ordered record of backward closures for one forward pass."""

    def __init__(self):
        self._records = []  # (closure, output tensor) in execution order

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, fn, out):
        self._records.append((fn, out))

    def clear(self):
        self._records.clear()

    def __len__(self):
        return len(self._records)

    def backward(self, root: Tensor):
        """Seed d(root)/d(root) = 1 and replay all records in reverse.

        All consumers of a value run before its producer, so each record sees
        its output gradient complete and can release it afterwards.
        """
        if root.data.size != 1:
            raise ShapeMismatchError(f"backward() needs a scalar root, got shape {root.data.shape}")
        if not root.requires_grad:
            raise ValueError("backward() root does not require grad; nothing was recorded")
        if root.grad is None:
            root.grad = np.zeros_like(root.data)
        root.grad[...] = 1.0
        for fn, out in reversed(self._records):
            if out.grad is None:
                continue  # no gradient reached this value
            fn()
            out.grad = None


def tape():
    return Tape()


def _trace(out: Tensor, backward_fn, *inputs):
    """Mark out as graph-connected and record backward_fn if a tape is live."""
    if _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE_TAPE.record(backward_fn, out)
    return out


def _unbroadcast(grad, shape):
    """Sum grad down to shape, inverting numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def backward():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad, b.data.shape))

    return _trace(out, backward, a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def backward():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            _accum(b, -_unbroadcast(out.grad, b.data.shape))

    return _trace(out, backward, a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def backward():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))

    return _trace(out, backward, a, b)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)

    def backward():
        if a.requires_grad:
            _accum(a, -out.grad)

    return _trace(out, backward, a)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)

    def backward():
        if a.requires_grad:
            _accum_owned(a, out.grad * s)

    return _trace(out, backward, a)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def backward():
        if a.requires_grad:
            np.multiply(out.grad, out.data > 0.0, out=out.grad)
            _accum_owned(a, out.grad)

    return _trace(out, backward, a)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    out = Tensor(y)

    def backward():
        if a.requires_grad:
            _accum(a, out.grad * 0.5 / y)

    return _trace(out, backward, a)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient blocked where the floor is active."""
    out = Tensor(np.maximum(a.data, floor))

    def backward():
        if a.requires_grad:
            _accum(a, out.grad * (a.data > floor))

    return _trace(out, backward, a)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatchError(
            f"matmul needs >=2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatchError(
            f"matmul inner dimensions differ: {a.data.shape} x {b.data.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def backward():
        if a.requires_grad:
            da = np.matmul(out.grad, np.swapaxes(b.data, -1, -2))
            _accum_owned(a, np.ascontiguousarray(_unbroadcast(da, a.data.shape)))
        if b.requires_grad:
            db = np.matmul(np.swapaxes(a.data, -1, -2), out.grad)
            _accum_owned(b, np.ascontiguousarray(_unbroadcast(db, b.data.shape)))

    return _trace(out, backward, a, b)


def softmax(a: Tensor, axis: int) -> Tensor:
    """Stable softmax along axis; slices sum to 1."""
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeMismatchError(f"softmax axis {axis} invalid for shape {a.data.shape}")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)

    def backward():
        if a.requires_grad:
            inner = np.sum(out.grad * y, axis=axis, keepdims=True)
            _accum_owned(a, y * (out.grad - inner))

    return _trace(out, backward, a)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def backward():
        if a.requires_grad:
            _accum(a, out.grad.reshape(a.data.shape))

    return _trace(out, backward, a)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = Tensor(np.transpose(a.data, axes))
    inverse = tuple(np.argsort(axes))

    def backward():
        if a.requires_grad:
            _accum(a, np.transpose(out.grad, inverse))

    return _trace(out, backward, a)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, out.grad[tuple(sl)])

    return _trace(out, backward, *tensors)


def take_range(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice along axis (gradient scatters back into the range)."""
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = Tensor(a.data[sl])

    def backward():
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[sl] += out.grad

    return _trace(out, backward, a)


def take_pairs(m: Tensor, rows, cols) -> Tensor:
    """Gather m[rows[i], cols[i]] into a 1-D tensor."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = Tensor(m.data[rows, cols])

    def backward():
        if m.requires_grad:
            if m.grad is None:
                m.grad = np.zeros_like(m.data)
            np.add.at(m.grad, (rows, cols), out.grad)

    return _trace(out, backward, m)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))

    def backward():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.data.shape))

    return _trace(out, backward, a)


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(np.mean(a.data, axis=axis, keepdims=keepdims))
    n = a.data.size if axis is None else a.data.shape[axis]

    def backward():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.data.shape) / n)

    return _trace(out, backward, a)


def reduce_max(a: Tensor, axis: int, keepdims=False) -> Tensor:
    """Max along one axis; gradient routes to the first maximal element."""
    idx = np.argmax(a.data, axis=axis)
    y = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    out = Tensor(y if keepdims else np.squeeze(y, axis=axis))

    def backward():
        if a.requires_grad:
            g = out.grad if keepdims else np.expand_dims(out.grad, axis)
            scatter = np.zeros_like(a.data)
            np.put_along_axis(scatter, np.expand_dims(idx, axis), g, axis=axis)
            _accum_owned(a, scatter)

    return _trace(out, backward, a)


# ---------------------------------------------------------------------------
# neural-net ops


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of x [N,C,H,W] with kernel [Co,C,kh,kw]."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d needs 4-D input and kernel, got {x.data.shape} and {kernel.data.shape}")
    n, c, h, w = x.data.shape
    co, ck, kh, kw = kernel.data.shape
    if ck != c:
        raise ShapeMismatchError(
            f"conv2d channel mismatch: input {x.data.shape} vs kernel {kernel.data.shape}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeMismatchError(
            f"conv2d kernel {kernel.data.shape} larger than padded input "
            f"{(n, c, h + 2 * padding, w + 2 * padding)}")
    if bias is not None and bias.data.shape != (co,):
        raise ShapeMismatchError(
            f"conv2d bias shape {bias.data.shape} does not match {co} output channels")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    y = kernels.conv2d_forward(xp, kernel.data, stride)
    if bias is not None:
        y += bias.data[None, :, None, None]
    out = Tensor(y)

    def backward():
        if x.requires_grad:
            dxp = kernels.conv2d_backward_x(out.grad, kernel.data, stride, xp.shape)
            if padding:
                _accum_owned(x, np.ascontiguousarray(
                    dxp[:, :, padding:padding + h, padding:padding + w]))
            else:
                _accum_owned(x, dxp)
        if kernel.requires_grad:
            _accum_owned(kernel, kernels.conv2d_backward_w(xp, out.grad, stride,
                                                           kernel.data.shape))
        if bias is not None and bias.requires_grad:
            _accum_owned(bias, out.grad.sum(axis=(0, 2, 3)))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _trace(out, backward, *inputs)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 stride-2 max pooling; odd trailing rows/columns are dropped."""
    y, idx = kernels.maxpool2x2_forward(x.data)
    out = Tensor(y)
    h, w = x.data.shape[2], x.data.shape[3]

    def backward():
        if x.requires_grad:
            _accum_owned(x, kernels.maxpool2x2_backward(out.grad, idx, h, w))

    return _trace(out, backward, x)


class BatchNormState:
    """Running statistics for one batchnorm layer (not trainable)."""

    def __init__(self, dim: int):
        self.running_mean = np.zeros(dim, dtype=np.float64)
        self.running_var = np.ones(dim, dtype=np.float64)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
              train: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Normalize x [N,D] per column; train mode uses (and updates) batch stats."""
    if x.data.ndim != 2:
        raise ShapeMismatchError(f"batchnorm expects [N,D] input, got {x.data.shape}")
    n = x.data.shape[0]
    if train:
        if n < 2:
            raise DegenerateBatchError(f"batchnorm in train mode needs N >= 2, got N={n}")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        state.running_mean = momentum * state.running_mean + (1.0 - momentum) * mu
        state.running_var = momentum * state.running_var + (1.0 - momentum) * var
    else:
        mu = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = Tensor(gamma.data * xhat + beta.data)

    def backward():
        dxhat = out.grad * gamma.data
        if x.requires_grad:
            if train:
                # closed form folding the batch mean/variance dependencies
                m1 = dxhat.mean(axis=0)
                m2 = (dxhat * xhat).mean(axis=0)
                _accum_owned(x, inv_std * (dxhat - m1 - xhat * m2))
            else:
                _accum_owned(x, dxhat * inv_std)
        if gamma.requires_grad:
            _accum(gamma, (out.grad * xhat).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, out.grad.sum(axis=0))

    return _trace(out, backward, x, gamma, beta)


# ---------------------------------------------------------------------------
# verification harness


def grad_check(f, x, step: float = 1e-5) -> float:
    """Compare analytic gradients of scalar f against central differences.

    x may be one Tensor or a sequence of Tensors (all requiring grad); f is
    invoked as f(*tensors). Returns the max over coordinates of
    |analytic - numeric| / max(1, |numeric|).
    """
    params = [x] if isinstance(x, Tensor) else list(x)
    for p in params:
        if not p.requires_grad:
            raise ValueError("grad_check inputs must require grad")
        p.zero_grad()

    with tape() as t:
        out = f(*params)
        if not np.isfinite(out.data).all():
            raise NumericError("grad_check: function value is not finite")
        t.backward(out)
    analytic = [p.grad.copy() for p in params]

    def eval_value():
        v = f(*params)
        val = float(v.data.reshape(-1)[0])
        if not math.isfinite(val):
            raise NumericError("grad_check: perturbed function value is not finite")
        return val

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = eval_value()
            flat[i] = orig - step
            down = eval_value()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(aflat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
