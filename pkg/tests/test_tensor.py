import math
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcua import tensor as T
from mcua.errors import DimensionError, NumericError, TapeError, ValidationError
from mcua.nn import LayerSpec, build, conv_block, down_block
from mcua.tensor import Tensor

from gradcheck import LAYER_CASES, check_case, numeric_grad, rel_error


def test_conv2d_window_sum():
    x = np.arange(1, 10, dtype=float).reshape(1, 1, 3, 3)
    out = T.conv2d(x, np.ones((1, 1, 2, 2)), np.zeros(1), stride=1)
    np.testing.assert_array_equal(out.data[0, 0], [[12, 16], [24, 28]])


def test_conv2d_zero_kernel():
    x = np.random.default_rng(0).normal(size=(2, 3, 7, 5))
    out = T.conv2d(x, np.zeros((4, 3, 3, 3)), np.zeros(4), stride=2)
    assert out.shape == (2, 4, 3, 2)
    assert np.all(out.data == 0)


def test_conv_output_shape_formula():
    assert T.conv_output_size(224, 3, 2) == 111


def test_conv2d_errors():
    with pytest.raises(DimensionError):
        T.conv2d(np.zeros((1, 2, 3, 3)), np.zeros((1, 3, 2, 2)))
    with pytest.raises(DimensionError):
        T.conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)))
    bad = np.zeros((1, 1, 3, 3))
    bad[0, 0, 1, 1] = np.nan
    with pytest.raises(NumericError):
        T.conv2d(bad, np.ones((1, 1, 2, 2)))


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(np.zeros(4)).data, [0.25] * 4)
    np.testing.assert_allclose(T.softmax(np.array([1.0, 0.0])).data, [0.731059, 0.268941], atol=1e-5)
    with pytest.raises(DimensionError):
        T.softmax(np.array([]))


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
def test_softmax_normalized_and_shift_invariant(xs, c):
    x = np.array(xs)
    p = T.softmax(x).data
    assert abs(p.sum() - 1) < 1e-9
    assert np.all(p > 0)
    np.testing.assert_allclose(T.softmax(x + c).data, p, atol=1e-12)


def test_cross_entropy_examples():
    y = np.array([1.0, 0, 0, 0])
    assert T.cross_entropy(y, y).data == pytest.approx(0.0)
    assert T.cross_entropy(np.full(4, 0.25), y).data == pytest.approx(math.log(4))
    assert T.cross_entropy(np.array([0.7, 0.1, 0.1, 0.1]), y).data == pytest.approx(0.356675, abs=1e-6)
    with pytest.raises(ValidationError):
        T.cross_entropy(np.full(4, 0.25), np.array([1.0, 1, 0, 0]))


def test_cross_entropy_floor_keeps_loss_finite():
    loss = T.cross_entropy(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert loss.data == pytest.approx(-math.log(T.PROB_FLOOR))


def test_backward_sum_gives_ones():
    w = Tensor(np.random.default_rng(1).normal(size=(3, 4)), requires_grad=True)
    T.tensor_sum(w).backward()
    np.testing.assert_array_equal(w.grad, np.ones((3, 4)))


def test_softmax_cross_entropy_logit_gradient():
    logits = Tensor(np.array([0.3, -1.2, 2.0, 0.1]), requires_grad=True)
    y = np.array([0.0, 0, 1, 0])
    T.cross_entropy(T.softmax(logits), y).backward()
    np.testing.assert_allclose(logits.grad, T.softmax(logits.data).data - y, atol=1e-12)


def test_backward_twice_is_tape_error():
    w = Tensor(np.ones(3), requires_grad=True)
    loss = T.tensor_sum(T.mul(w, w))
    loss.backward()
    with pytest.raises(TapeError):
        loss.backward()


def test_nonfinite_loss_is_numeric_error():
    w = Tensor(np.array([np.inf]), requires_grad=True)
    with pytest.raises(NumericError):
        T.tensor_sum(w).backward()


@pytest.mark.parametrize("kind", sorted(LAYER_CASES))
def test_gradcheck_layer(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    for _ in range(5):
        assert check_case(kind, rng) < 1e-4


def test_gradcheck_small_network():
    rng = np.random.default_rng(3)
    specs = (
        conv_block(3, padding="same")
        + down_block(4)
        + [LayerSpec("spatial-mean"), LayerSpec("fc", 3), LayerSpec("log-softmax")]
    )
    net = build(specs, 2, rng).train()
    x = rng.normal(size=(3, 2, 6, 6))
    labels = np.array([0, 2, 1])
    params = net.named_parameters()

    def loss_value():
        return float(T.nll_loss(net(x), labels).data)

    # batch-norm running stats move on every train-mode call; snapshot them
    buffers = {k: v.copy() for k, v in net.named_buffers().items()}
    T.nll_loss(net(x), labels).backward()
    for name, p in params.items():
        num = numeric_grad(loss_value, p.data)
        assert rel_error(p.grad, num) < 1e-4, name
    for k, v in net.named_buffers().items():
        v[...] = buffers[k]


def test_dropout_rate_zero_identity():
    x = np.random.default_rng(0).normal(size=(5, 7))
    rng = np.random.default_rng(1)
    assert np.array_equal(T.dropout(x, 0.0, rng, active=True).data, x)
    assert np.array_equal(T.dropout(x, 0.9, None, active=False).data, x)


@pytest.mark.parametrize("p", [0.1, 0.5, 0.7])
def test_dropout_statistics(p):
    n = 20000
    out = T.dropout(np.ones(n), p, np.random.default_rng(5)).data
    zero_frac = np.mean(out == 0)
    assert abs(zero_frac - p) <= 3 * math.sqrt(p * (1 - p) / n)
    np.testing.assert_allclose(out[out != 0], 1 / (1 - p))


def test_dropout_rejects_bad_rate():
    with pytest.raises(ValidationError):
        T.dropout(np.ones(3), 1.0, np.random.default_rng(0))


def test_batchnorm_normalizes_training_batch():
    rng = np.random.default_rng(2)
    x = rng.normal(3.0, 2.5, size=(16, 3, 5, 5))
    c = x.shape[1]
    out = T.batch_norm(x, np.ones(c), np.zeros(c), np.zeros(c), np.ones(c), training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)


def test_layer_spec_validation():
    with pytest.raises(ValidationError):
        LayerSpec("conv2d", 4, kernel=0)
    with pytest.raises(ValidationError):
        LayerSpec("dropout", rate=1.0)
    with pytest.raises(ValidationError):
        LayerSpec("maxpool")
