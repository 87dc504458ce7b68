"""Dense float64 tensors with a reverse-mode gradient tape.

Every op builds its output through ``_node``; when no input requires a
gradient the tape is skipped entirely, so inference runs on plain arrays
wrapped in a thin object.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, TapeError, ValidationError

PROB_FLOOR = 1e-12
BN_EPS = 1e-5


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_spent")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def backward(self):
        """Populate ``.grad`` on every reachable leaf that requires it."""
        if self._spent:
            raise TapeError("backward() already ran on this graph; re-run the forward pass")
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite loss {self.data.item()!r}")
        if not self.requires_grad:
            raise TapeError("loss does not depend on any tensor requiring grad")

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
            node._spent = True
            node._backward_fn = None
            node._parents = ()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward_fn)
    return Tensor(data)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def check_finite(t: Tensor, what="tensor"):
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values in {what}")


# -- elementwise / linear algebra -------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), bw)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape (N, in) and weight (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _node(out, parents, bw)


def tensor_sum(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def tensor_mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _node(np.array(a.data.mean()), (a,), lambda g: (np.full(a.shape, g / n),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        idx = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            grads.append(g[tuple(idx)])
        return grads

    return _node(out, tensors, bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


def spatial_mean(x) -> Tensor:
    """(N, C, H, W) -> (N, C) average over the spatial axes."""
    x = as_tensor(x)
    n, c, h, w = x.shape

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return _node(x.data.mean(axis=(2, 3)), (x,), bw)


# -- convolution ------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int) -> int:
    if kernel < 1 or stride < 1:
        raise ValidationError(f"kernel {kernel} and stride {stride} must be >= 1")
    if size < kernel:
        raise DimensionError(f"input extent {size} smaller than kernel {kernel}")
    return 1 + (size - kernel) // stride


def same_padding(size, kernel, stride):
    """(before, after) zero border giving ceil(size / stride) outputs; odd totals go after."""
    total = max((-(-size // stride) - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv2d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of (N, C, H, W) input with (K, C, kh, kw) kernels.

    ``padding`` is a zero border: an int for a symmetric border, or
    ``((top, bottom), (left, right))``; 0 gives the valid-mode output.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    k, ck, kh, kw = weight.shape
    if c != ck:
        raise DimensionError(f"conv2d: input has {c} channels, kernel expects {ck}")
    check_finite(x, "conv2d input")
    (pt, pb), (pl, pr) = ((padding, padding), (padding, padding)) if np.isscalar(padding) else padding
    xp = x.data
    if pt or pb or pl or pr:
        xp = np.pad(xp, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    ho = conv_output_size(h + pt + pb, kh, stride)
    wo = conv_output_size(w + pl + pr, kw, stride)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # im2col once: rows are output positions (n, ho, wo), columns are (c, kh, kw) taps
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(k, c * kh * kw)
    wmat_hwc = weight.data.transpose(0, 2, 3, 1).reshape(k, kh * kw * c)
    out = cols @ wmat.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
        parents.append(bias)
    out = out.reshape(n, ho, wo, k).transpose(0, 3, 1, 2)

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, k)
        gw = (gmat.T @ cols).reshape(weight.shape)
        # taps ordered (kh, kw, c) so each scatter below moves contiguous channel runs
        gcols = (gmat @ wmat_hwc).reshape(n, ho, wo, kh, kw, c)
        gxp = np.zeros((n, xp.shape[2], xp.shape[3], c))
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, :, i, j]
        gxp = gxp.transpose(0, 3, 1, 2)
        gx = gxp[:, :, pt:pt + h, pl:pl + w]
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(gmat.sum(axis=0))
        return grads

    return _node(np.ascontiguousarray(out), parents, bw)


# -- normalization / regularization -----------------------------------------

def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=BN_EPS) -> Tensor:
    """Per-channel batch norm over (N, H, W) for (N, C, H, W) input.

    In training mode the running statistics (plain arrays) are updated in place.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(shape)
        if training:
            m = x.data.size // x.shape[1]
            gx = (inv_std.reshape(shape) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes).reshape(shape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(shape)
            )
        else:
            gx = gxhat * inv_std.reshape(shape)
        return gx, gg, gb

    return _node(out, (x, gamma, beta), bw)


def dropout(x, rate, rng=None, active=True) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) when active."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate {rate} outside [0, 1)")
    if not active or rate == 0.0:
        return x
    if rng is None:
        raise ValidationError("active dropout needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


# -- probability heads ------------------------------------------------------

def log_softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    if x.data.size == 0:
        raise DimensionError("log_softmax of an empty tensor")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), bw)


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    if x.data.size == 0:
        raise DimensionError("softmax of an empty tensor")
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), bw)


def _check_one_hot(y):
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise ValidationError("target is not one-hot")


def cross_entropy(y_hat, y) -> Tensor:
    """-sum(y * log(y_hat)) on probabilities, averaged over a leading batch axis.

    Probabilities are floored at ``PROB_FLOOR`` inside the log.
    """
    y_hat = as_tensor(y_hat)
    y = np.asarray(as_tensor(y).data)
    if y.shape != y_hat.shape:
        raise DimensionError(f"cross_entropy: {y_hat.shape} vs target {y.shape}")
    _check_one_hot(y)
    p = np.maximum(y_hat.data, PROB_FLOOR)
    n = y.shape[0] if y.ndim == 2 else 1
    loss = -(y * np.log(p)).sum() / n

    def bw(g):
        return (-g * y * (y_hat.data > PROB_FLOOR) / p / n,)

    return _node(np.array(loss), (y_hat,), bw)


def nll_loss(log_probs, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under (N, C) log-probs."""
    log_probs = as_tensor(log_probs)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = log_probs.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= c:
        raise ValidationError("labels must be one class index per row")
    rows = np.arange(n)
    loss = -log_probs.data[rows, labels].mean()

    def bw(g):
        out = np.zeros_like(log_probs.data)
        out[rows, labels] = -g / n
        return (out,)

    return _node(np.array(loss), (log_probs,), bw)
