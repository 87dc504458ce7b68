"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np


def numeric_grad(f, arr, h=1e-5):
    """d f() / d arr by central differences; ``f`` must read ``arr`` in place."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    # both sides at round-off level: the true gradient is zero
    if denom < 1e-9:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


# -- per-layer randomized cases ---------------------------------------------
# Each builder returns (arrays, fn) where fn(*tensors) -> Tensor and arrays are
# the float64 inputs whose gradients are checked.

from mcua import tensor as T  # noqa: E402
from mcua.tensor import Tensor  # noqa: E402


def _conv_case(rng, padding_mode):
    n, c, k = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    kh = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    h, w = int(rng.integers(kh, kh + 4)), int(rng.integers(kh, kh + 4))
    pad = (kh - 1) // 2 if padding_mode == "same" else 0
    x = rng.normal(size=(n, c, h, w))
    wt = rng.normal(size=(k, c, kh, kh))
    b = rng.normal(size=k)
    return [x, wt, b], lambda x, wt, b: T.conv2d(x, wt, b, stride, pad)


def _down_case(rng):
    n, c, k = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
    # ceil-mode border for odd or 1-pixel extents, valid mode otherwise
    pad = (T.same_padding(h, 2, 2), T.same_padding(w, 2, 2)) if (h < 2 or w < 2 or rng.random() < 0.5) else 0
    x = rng.normal(size=(n, c, h, w))
    wt = rng.normal(size=(k, c, 2, 2))
    b = rng.normal(size=k)
    return [x, wt, b], lambda x, wt, b: T.conv2d(x, wt, b, 2, pad)


def _bn_case(rng, training):
    # at least 4 values per channel: with 2, the output is exactly +-1 and the x-gradient vanishes
    n, c = int(rng.integers(2, 4)), int(rng.integers(1, 4))
    h, w = int(rng.integers(2, 4)), int(rng.integers(1, 4))
    x = rng.normal(size=(n, c, h, w)) * 2 + 1
    gamma = rng.normal(size=c)
    beta = rng.normal(size=c)
    rm, rv = rng.normal(size=c), rng.uniform(0.5, 2, size=c)

    def fn(x, gamma, beta):
        return T.batch_norm(x, gamma, beta, rm.copy(), rv.copy(), training)

    return [x, gamma, beta], fn


def _relu_case(rng):
    x = rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(1, 6))))
    x[np.abs(x) < 1e-3] = 0.5
    return [x], T.relu


def _dropout_case(rng):
    x = rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(2, 8))))
    rate = float(rng.uniform(0.1, 0.8))
    seed = int(rng.integers(1 << 30))
    return [x], lambda x: T.dropout(x, rate, np.random.default_rng(seed))


def _fc_case(rng):
    n, fin, fout = (int(v) for v in rng.integers(1, 5, size=3))
    return [rng.normal(size=(n, fin)), rng.normal(size=(fout, fin)), rng.normal(size=fout)], T.linear


def _log_softmax_case(rng):
    return [rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(2, 6))))], T.log_softmax


def _softmax_case(rng):
    return [rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(2, 6))))], T.softmax


def _spatial_mean_case(rng):
    return [rng.normal(size=tuple(int(v) for v in rng.integers(1, 4, size=4)))], T.spatial_mean


def _concat_case(rng):
    a = rng.normal(size=(2, int(rng.integers(1, 4)), 3, 3))
    b = rng.normal(size=(2, int(rng.integers(1, 4)), 3, 3))
    return [a, b], lambda a, b: T.concat([a, b], axis=1)


def _cross_entropy_case(rng):
    c = int(rng.integers(2, 6))
    y = np.eye(c)[rng.integers(c, size=3)]
    logits = rng.normal(size=(3, c))
    return [logits], lambda z: T.cross_entropy(T.softmax(z), y)


def _nll_case(rng):
    c = int(rng.integers(2, 6))
    labels = rng.integers(c, size=4)
    return [rng.normal(size=(4, c))], lambda z: T.nll_loss(T.log_softmax(z), labels)


LAYER_CASES = {
    "conv2d-valid": lambda rng: _conv_case(rng, "valid"),
    "conv2d-same": lambda rng: _conv_case(rng, "same"),
    "down": _down_case,
    "batchnorm2d-train": lambda rng: _bn_case(rng, True),
    "batchnorm2d-eval": lambda rng: _bn_case(rng, False),
    "relu": _relu_case,
    "dropout": _dropout_case,
    "fc": _fc_case,
    "log-softmax": _log_softmax_case,
    "softmax": _softmax_case,
    "spatial-mean": _spatial_mean_case,
    "concat": _concat_case,
    "cross-entropy": _cross_entropy_case,
    "nll": _nll_case,
}


def check_case(kind, rng):
    """Worst relative error between autograd and finite differences."""
    arrays, fn = LAYER_CASES[kind](rng)
    probe = None

    def scalar():
        out = fn(*[Tensor(a) for a in arrays])
        return float((out.data * probe).sum())

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    probe = rng.normal(size=out.shape)
    T.tensor_sum(T.mul(out, probe)).backward()
    worst = 0.0
    for t, a in zip(tensors, arrays):
        num = numeric_grad(scalar, a)
        worst = max(worst, rel_error(t.grad, num))
    return worst
