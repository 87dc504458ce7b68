"""Adam with bias-corrected moments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, ValidationError


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValidationError("Adam betas must lie in (0, 1)")
        if self.learning_rate < 0:
            raise ValidationError("learning rate must be >= 0")


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """Update ``params`` (name -> array) in place from ``grads``.

    All gradients are validated before anything is written, so a non-finite
    gradient leaves both parameters and state untouched.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if np.shape(g) != np.shape(p):
            raise DimensionError(f"gradient for {name} has shape {np.shape(g)}, parameter {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


class Adam:
    """Thin wrapper binding an ``AdamState`` to a model's parameter tensors."""

    def __init__(self, named_params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = named_params
        self.state = AdamState(lr, betas[0], betas[1], eps)

    def step(self):
        adam_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items() if p.grad is not None},
            self.state,
        )

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
