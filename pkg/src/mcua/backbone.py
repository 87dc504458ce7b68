"""Patch-wise feature extractors.

Two small layouts stand in for the large pre-trained networks:

* ``arch-A``: 4 conv blocks, wider.
* ``arch-B``: 6 conv blocks, narrower.

Each ends in a convolution whose raw output is the patch's feature map; the
classification head (BN, ReLU, spatial mean, one FC layer) sits on top and
is only used for fine-tuning and patch-level prediction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import NumericError, ValidationError
from .nn import LayerSpec, build, conv_block, down_block, spatial_shape
from .optim import Adam

log = logging.getLogger(__name__)

ARCHITECTURES = ("arch-A", "arch-B")


def trunk_specs(arch, feature_channels):
    if arch == "arch-A":
        return conv_block(8) + down_block(16) + conv_block(16) + [LayerSpec("down", feature_channels, 2, 2)]
    if arch == "arch-B":
        return (
            conv_block(6)
            + conv_block(6)
            + down_block(8)
            + conv_block(8)
            + down_block(8)
            + [LayerSpec("conv2d", feature_channels, 1)]
        )
    raise ValidationError(f"unknown backbone architecture {arch!r}; expected one of {ARCHITECTURES}")


def head_specs(num_classes):
    return [LayerSpec("batchnorm2d"), LayerSpec("relu"), LayerSpec("spatial-mean"), LayerSpec("fc", num_classes)]


@dataclass(frozen=True)
class BackboneSpec:
    arch: str
    scale_id: int
    patch_size: tuple  # (width, height); a bare int means square
    feature_channels: int = 4
    num_classes: int = 4

    def __post_init__(self):
        size = self.patch_size
        object.__setattr__(self, "patch_size", (size, size) if isinstance(size, int) else tuple(int(v) for v in size))
        if self.num_classes < 2:
            raise ValidationError("need at least 2 classes")
        trunk_specs(self.arch, self.feature_channels)

    @property
    def backbone_id(self):
        return f"{self.arch}.s{self.scale_id}"

    @property
    def feature_shape(self):
        pw, ph = self.patch_size
        h, w = spatial_shape(trunk_specs(self.arch, self.feature_channels), ph, pw)
        return self.feature_channels, h, w


class Backbone:
    def __init__(self, spec: BackboneSpec, rng, zero_init_head=False):
        self.spec = spec
        trunk = trunk_specs(spec.arch, spec.feature_channels)
        self.feature_stop = len(trunk)
        self.net = build(trunk + head_specs(spec.num_classes), 3, rng, zero_init_last_fc=zero_init_head)

    def _to_nchw(self, patches):
        patches = np.asarray(patches, dtype=np.float64)
        if patches.ndim == 3:
            patches = patches[None]
        pw, ph = self.spec.patch_size
        if patches.shape[1:] != (ph, pw, 3):
            raise ValidationError(
                f"{self.spec.backbone_id} expects {pw}x{ph} RGB patches, got array shape {patches.shape[1:]}"
            )
        return patches.transpose(0, 3, 1, 2)

    def logits(self, patches, rng=None):
        return self.net(self._to_nchw(patches), rng)

    def feature_maps(self, patches, chunk=256):
        """(a, C_f, h_f, w_f) feature maps, one per patch, in input order (eval mode)."""
        self.net.eval()
        x = self._to_nchw(patches)
        out = [self.net(x[i:i + chunk], stop=self.feature_stop).data for i in range(0, len(x), chunk)]
        return np.concatenate(out, axis=0)

    def predict(self, patches):
        self.net.eval()
        return T.softmax(self.logits(patches), axis=-1).data

    def state_dict(self):
        return self.net.state_dict()

    def load_state_dict(self, state):
        self.net.load_state_dict(state)


def predict_patch(backbone: Backbone, patch) -> np.ndarray:
    pixels = getattr(patch, "pixels", patch)
    return backbone.predict(pixels)[0]


def extract_feature_maps(backbone: Backbone, patches) -> np.ndarray:
    """Feature maps for the patches of one (image, scale); accepts Patch objects or an array."""
    if len(patches) and hasattr(patches[0], "pixels"):
        order = np.argsort([p.grid_index for p in patches], kind="stable")
        patches = np.stack([patches[i].pixels for i in order])
    return backbone.feature_maps(patches)


def fine_tune(backbone: Backbone, patches, labels, epochs, lr, batch_size, rng, loss_log=None):
    """Adam on mean cross-entropy over mini-batches of labelled patches.

    Returns the loss history as (epoch, batch, loss) tuples, one per batch.
    """
    patches = np.asarray(patches)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(patches)
    if n == 0:
        raise ValidationError("fine_tune: empty patch set")
    if len(labels) != n:
        raise ValidationError("fine_tune: one label per patch required")
    opt = Adam(backbone.net.named_parameters(), lr=lr)
    history = []
    backbone.net.train()
    for epoch in range(epochs):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            opt.zero_grad()
            logp = T.log_softmax(backbone.logits(patches[idx], rng), axis=-1)
            loss = T.nll_loss(logp, labels[idx])
            if not np.isfinite(loss.data):
                raise NumericError(f"{backbone.spec.backbone_id}: non-finite loss at epoch {epoch} batch {b}")
            loss.backward()
            opt.step()
            history.append((epoch, b, float(loss.data)))
            if loss_log is not None:
                loss_log.write(f"{epoch},{b},{float(loss.data)!r}\n")
        log.debug("%s epoch %d loss %.4f", backbone.spec.backbone_id, epoch, history[-1][2])
    backbone.net.eval()
    return history
