"""Adam with bias-corrected moments."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 1e-4


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None],
              state: AdamState, weight_decay: float = 0.0,
              decay_masks: dict[str, np.ndarray] | None = None) -> list[str]:
    """Update ``params`` in place. Returns the names skipped for non-finite gradients.

    ``weight_decay`` is added to the gradient as an L2 term; ``decay_masks`` may
    exclude entries (e.g. embedding padding rows) from it.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    skipped = []
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            log.warning("non-finite gradient for %s at step %d; update skipped", name, t)
            skipped.append(name)
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} differs from parameter {name} {p.shape}")
        if weight_decay:
            decay = weight_decay * p
            if decay_masks and name in decay_masks:
                decay = decay * decay_masks[name]
            g = g + decay
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return skipped


class Adam:
    """Thin stateful wrapper over :func:`adam_step` for named tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0,
                 decay_masks: dict[str, np.ndarray] | None = None):
        self.params = params
        self.state = AdamState(beta1=betas[0], beta2=betas[1], epsilon=eps, learning_rate=lr)
        self.weight_decay = weight_decay
        self.decay_masks = decay_masks or {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> list[str]:
        return adam_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.state,
            self.weight_decay,
            self.decay_masks,
        )
