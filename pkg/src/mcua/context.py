"""Context-aware CNNs over concatenated pattern members.

Every placement of a pattern on an image's feature-map grid becomes one input
tensor of ``g * C_f`` channels. The CNN classifies each placement; the image
distribution is the mean of the per-placement probabilities.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import NoContextError, NumericError, ValidationError
from .nn import LayerSpec, build, conv_block, down_block
from .optim import Adam
from .patterns import PatternSpec, all_placements, stack_placements

log = logging.getLogger(__name__)


def context_layer_specs(num_classes, dropout=0.7, conv_widths=(16, 32), fc_widths=(32, 16)):
    c1, c2 = conv_widths
    return (
        conv_block(c1, padding="same")
        + down_block(c1, padding="same")
        + conv_block(c2, padding="same")
        + down_block(c2, padding="same")
        + conv_block(c2, kernel=1)
        + [LayerSpec("spatial-mean"), LayerSpec("dropout", rate=dropout)]
        + [LayerSpec("fc", fc_widths[0]), LayerSpec("relu"), LayerSpec("fc", fc_widths[1]), LayerSpec("relu")]
        + [LayerSpec("fc", num_classes), LayerSpec("log-softmax")]
    )


@dataclass(frozen=True)
class ContextModelSpec:
    backbone_id: str
    scale_id: int
    pattern: PatternSpec
    feature_channels: int
    num_classes: int = 4
    dropout: float = 0.7
    conv_widths: tuple = (16, 32)
    fc_widths: tuple = (32, 16)

    @property
    def model_id(self):
        return f"{self.backbone_id}.{self.pattern.pattern_id}"

    @property
    def in_channels(self):
        return self.pattern.g * self.feature_channels

    def layer_specs(self):
        return context_layer_specs(self.num_classes, self.dropout, self.conv_widths, self.fc_widths)


class ContextModel:
    def __init__(self, spec: ContextModelSpec, rng):
        self.spec = spec
        specs = spec.layer_specs()
        self.dropout_index = next(i for i, s in enumerate(specs) if s.kind == "dropout")
        self.net = build(specs, spec.in_channels, rng)

    def placements(self, grid):
        return all_placements(grid, self.spec.pattern)

    def inputs_for(self, maps, grid):
        """Stack every placement of one image's feature maps, or raise NoContextError."""
        placements = self.placements(grid)
        if not placements:
            raise NoContextError(f"{self.spec.model_id}: no pattern placement fits a {grid.cols}x{grid.rows} grid")
        return stack_placements(maps, placements)

    def log_probs(self, x, rng=None):
        return self.net(x, rng)

    def trunk(self, x):
        """Deterministic eval-mode features entering the dropout layer, (P, D)."""
        self.net.eval()
        return self.net(x, stop=self.dropout_index).data

    def head_passes(self, features, z, rng, mc=True):
        """Probabilities of ``z`` MC-dropout passes through the head, shape (z, P, C).

        Mask draws follow the order of ``z`` successive single passes.
        """
        p, d = features.shape
        rate = self.net.layers[self.dropout_index].rate
        h = np.broadcast_to(features, (z, p, d))
        if mc and rate > 0:
            h = h * ((rng.random((z, p, d)) >= rate) / (1.0 - rate))
        self.net.eval()
        out = self.net(h.reshape(z * p, d), start=self.dropout_index + 1).data
        return np.exp(out).reshape(z, p, -1)

    def state_dict(self):
        return self.net.state_dict()

    def load_state_dict(self, state):
        self.net.load_state_dict(state)


def context_forward(model: ContextModel, tensors, mc_mode=False, rng=None):
    """Per-placement log-probabilities (P, C) and the pooled image distribution (C,)."""
    tensors = np.asarray(tensors)
    if tensors.ndim != 4 or len(tensors) == 0:
        raise NoContextError(f"{model.spec.model_id}: no placement tensors for this image")
    model.net.eval()
    model.net.mc = mc_mode
    try:
        logp = model.log_probs(tensors, rng).data
    finally:
        model.net.mc = False
    return logp, np.exp(logp).mean(axis=0)


def train_context_model(model: ContextModel, image_inputs, labels, epochs, lr, batch_size, rng, loss_log=None):
    """Train on image-level labels; each batch holds all placements of ``batch_size`` images."""
    n = len(image_inputs)
    if n == 0:
        raise ValidationError("train_context_model: no training images")
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.array([len(x) for x in image_inputs])
    if np.any(counts == 0):
        raise NoContextError(f"{model.spec.model_id}: a training image has no placements")
    opt = Adam(model.net.named_parameters(), lr=lr)
    history = []
    model.net.train()
    for epoch in range(epochs):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            x = np.concatenate([image_inputs[i] for i in idx], axis=0)
            y = np.repeat(labels[idx], counts[idx])
            opt.zero_grad()
            loss = T.nll_loss(model.log_probs(x, rng), y)
            if not np.isfinite(loss.data):
                raise NumericError(f"{model.spec.model_id}: non-finite loss at epoch {epoch} batch {b}")
            loss.backward()
            opt.step()
            history.append((epoch, b, float(loss.data)))
            if loss_log is not None:
                loss_log.write(f"{epoch},{b},{float(loss.data)!r}\n")
    model.net.eval()
    return history


def image_distribution(model: ContextModel, x):
    """Eval-mode pooled distribution for one image's placement stack."""
    return context_forward(model, x)[1]
