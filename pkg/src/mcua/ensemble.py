"""MC-dropout uncertainty and uncertainty-gated dynamic ensembling.

Each context model is run ``z`` times with dropout active. The per-class mean
of those passes is the model's prediction; the per-class population standard
deviation is its uncertainty. A model joins an image's ensemble only when its
scalar uncertainty is strictly below ``delta``; images with no such model are
abstained.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

ABSTAIN = -1
STATIC = math.inf
REDUCTIONS = ("argmax", "max", "mean")


@dataclass
class PassSummary:
    model_id: str
    mean: np.ndarray
    variance: np.ndarray
    sigma: np.ndarray
    scalar_uncertainty: float
    z: int
    passes: np.ndarray | None = None


@dataclass
class EnsembleDecision:
    image_id: str
    summaries: list
    delta: float
    selected: list
    distribution: np.ndarray | None
    label: int
    true_label: int | None = None

    @property
    def abstained(self):
        return self.label == ABSTAIN


def mc_predict(model, x, z, rng):
    """``z`` pooled image distributions from MC-dropout passes over one image's placements.

    The convolutional trunk sits before the only dropout layer, so it is
    evaluated once and the head is sampled ``z`` times.
    """
    if z < 2:
        raise ValidationError(f"need at least 2 MC passes, got {z}")
    feats = model.trunk(np.asarray(x))
    return model.head_passes(feats, z, rng).mean(axis=1)


def summarize_passes(passes, model_id="", reduction="argmax", keep_passes=False) -> PassSummary:
    passes = np.asarray(passes, dtype=np.float64)
    if passes.ndim != 2:
        raise ValidationError("passes must be a (z, C) array of equal-length distributions")
    z = passes.shape[0]
    if z < 2:
        raise ValidationError(f"need at least 2 passes, got {z}")
    if reduction not in REDUCTIONS:
        raise ValidationError(f"unknown uncertainty reduction {reduction!r}")
    same = (passes == passes[0]).all(axis=0)
    mean = np.where(same, passes[0], passes.mean(axis=0))
    variance = np.where(same, 0.0, ((passes - mean) ** 2).mean(axis=0))
    sigma = np.sqrt(variance)
    if reduction == "argmax":
        scalar = float(sigma[int(np.argmax(mean))])
    elif reduction == "max":
        scalar = float(sigma.max())
    else:
        scalar = float(sigma.mean())
    return PassSummary(model_id, mean, variance, sigma, scalar, z, passes if keep_passes else None)


def unavailable_summary(model_id, num_classes) -> PassSummary:
    """Stand-in for a model with no usable placement; never passes any gate."""
    nan = np.full(num_classes, np.nan)
    return PassSummary(model_id, nan, nan, nan, math.inf, 0)


def select_models(summaries, delta):
    if not delta > 0:
        raise ValidationError(f"delta must be > 0, got {delta}")
    return [s.model_id for s in summaries if s.scalar_uncertainty < delta]


def aggregate_and_classify(selected):
    """Mean of the selected models' mean distributions, or ABSTAIN when none are selected."""
    if not selected:
        return None, ABSTAIN
    ordered = sorted(selected, key=lambda s: s.model_id)
    b = np.mean([s.mean for s in ordered], axis=0)
    b = b / b.sum()
    return b, int(np.argmax(b))


def decide(summaries, delta, image_id="", true_label=None) -> EnsembleDecision:
    chosen = set(select_models(summaries, delta))
    selected = [s for s in summaries if s.model_id in chosen]
    b, label = aggregate_and_classify(selected)
    return EnsembleDecision(image_id, list(summaries), delta, [s.model_id for s in selected], b, label, true_label)


def classify_image(image, roster, delta, z, image_id="", true_label=None) -> EnsembleDecision:
    """Full pipeline for one image; ``delta=STATIC`` gives the static ensemble."""
    summaries = roster.pass_summaries(image, z, image_id)
    return decide(summaries, delta, image_id, true_label)
