"""Layer set for the backbone and context CNNs, built from ``LayerSpec`` lists."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ValidationError
from .tensor import Tensor

LAYER_KINDS = ("conv2d", "down", "batchnorm2d", "relu", "dropout", "spatial-mean", "fc", "log-softmax", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out: int = 0
    kernel: int = 3
    stride: int = 1
    padding: str = "valid"
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1 or self.stride < 1:
            raise ValidationError(f"{self.kind}: kernel and stride must be >= 1")
        if not 0.0 <= self.rate < 1.0:
            raise ValidationError(f"dropout rate {self.rate} outside [0, 1)")
        if self.padding not in ("valid", "same"):
            raise ValidationError(f"padding must be 'valid' or 'same', got {self.padding!r}")


def conv_block(out, kernel=3, padding="valid"):
    return [LayerSpec("conv2d", out, kernel, 1, padding), LayerSpec("batchnorm2d"), LayerSpec("relu")]


def down_block(out, padding="valid"):
    """2x2 stride-2 convolution used for down-sampling, then BN + ReLU.

    With ``padding="same"`` odd extents get one zero row/column at the
    bottom/right, so the output is ceil(n / 2) and a 1-pixel map survives.
    """
    return [LayerSpec("down", out, 2, 2, padding), LayerSpec("batchnorm2d"), LayerSpec("relu")]


class Layer:
    def params(self):
        return {}

    def buffers(self):
        return {}

    def __call__(self, x, training, dropout_on, rng):
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, cin, cout, kernel, stride, padding, rng):
        fan_in = cin * kernel * kernel
        self.weight = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), (cout, cin, kernel, kernel)), True)
        self.bias = Tensor(np.zeros(cout), True)
        self.stride = stride
        self.kernel = kernel
        self.same = padding == "same"

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def padding(self, h, w):
        if not self.same:
            return 0
        return T.same_padding(h, self.kernel, self.stride), T.same_padding(w, self.kernel, self.stride)

    def __call__(self, x, training, dropout_on, rng):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding(*x.shape[2:]))


class BatchNorm2d(Layer):
    def __init__(self, channels):
        self.gamma = Tensor(np.ones(channels), True)
        self.beta = Tensor(np.zeros(channels), True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def __call__(self, x, training, dropout_on, rng):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, training)


class ReLU(Layer):
    def __call__(self, x, training, dropout_on, rng):
        return T.relu(x)


class Dropout(Layer):
    def __init__(self, rate):
        self.rate = rate

    def __call__(self, x, training, dropout_on, rng):
        return T.dropout(x, self.rate, rng, active=dropout_on)


class SpatialMean(Layer):
    def __call__(self, x, training, dropout_on, rng):
        return T.spatial_mean(x)


class Linear(Layer):
    def __init__(self, fin, fout, rng, zero_init=False):
        if zero_init:
            w = np.zeros((fout, fin))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fin), (fout, fin))
        self.weight = Tensor(w, True)
        self.bias = Tensor(np.zeros(fout), True)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x, training, dropout_on, rng):
        return T.linear(x, self.weight, self.bias)


class LogSoftmax(Layer):
    def __call__(self, x, training, dropout_on, rng):
        return T.log_softmax(x, axis=-1)


class Softmax(Layer):
    def __call__(self, x, training, dropout_on, rng):
        return T.softmax(x, axis=-1)


class Sequential:
    """Ordered layers with train/eval state and an MC-dropout switch.

    Dropout fires when ``training`` is set or when ``mc`` is set in eval mode;
    batch norm follows ``training`` only.
    """

    def __init__(self, layers):
        self.layers = list(layers)
        self.training = False
        self.mc = False

    def train(self, on=True):
        self.training = on
        return self

    def eval(self):
        self.training = False
        return self

    def __call__(self, x, rng=None, start=0, stop=None):
        x = T.as_tensor(x)
        dropout_on = self.training or self.mc
        for layer in self.layers[start:stop]:
            x = layer(x, self.training, dropout_on, rng)
        return x

    def named_parameters(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                out[f"{i}.{name}"] = p
        return out

    def named_buffers(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers().items():
                out[f"{i}.{name}"] = b
        return out

    def state_dict(self):
        state = {k: p.data for k, p in self.named_parameters().items()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state):
        params, buffers = self.named_parameters(), self.named_buffers()
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise ValidationError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in state.items():
            target = params[name].data if name in params else buffers[name]
            if target.shape != np.shape(arr):
                raise ValidationError(f"{name}: shape {np.shape(arr)} != {target.shape}")
            target[...] = arr

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.named_parameters().values())


def build(specs, in_channels, rng, zero_init_last_fc=False):
    """Instantiate ``specs`` for an input with ``in_channels`` channels."""
    layers = []
    c = in_channels
    fc_positions = [i for i, s in enumerate(specs) if s.kind == "fc"]
    for i, s in enumerate(specs):
        if s.kind in ("conv2d", "down"):
            layers.append(Conv2d(c, s.out, s.kernel, s.stride, s.padding, rng))
            c = s.out
        elif s.kind == "batchnorm2d":
            layers.append(BatchNorm2d(c))
        elif s.kind == "relu":
            layers.append(ReLU())
        elif s.kind == "dropout":
            layers.append(Dropout(s.rate))
        elif s.kind == "spatial-mean":
            layers.append(SpatialMean())
        elif s.kind == "fc":
            zero = zero_init_last_fc and fc_positions and i == fc_positions[-1]
            layers.append(Linear(c, s.out, rng, zero_init=zero))
            c = s.out
        elif s.kind == "log-softmax":
            layers.append(LogSoftmax())
        elif s.kind == "softmax":
            layers.append(Softmax())
    return Sequential(layers)


def spatial_shape(specs, h, w):
    """Spatial extent after the convolutional prefix of ``specs``."""
    for s in specs:
        if s.kind in ("conv2d", "down"):
            if s.padding == "same":
                h += sum(T.same_padding(h, s.kernel, s.stride))
                w += sum(T.same_padding(w, s.kernel, s.stride))
            h = T.conv_output_size(h, s.kernel, s.stride)
            w = T.conv_output_size(w, s.kernel, s.stride)
        elif s.kind in ("spatial-mean", "fc"):
            break
    return h, w
