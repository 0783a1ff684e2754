"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor


class NondeterministicLoss(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    checked_entries: dict[str, int]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.max_rel_error.values())

    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.max_rel_error.items() if not v < self.tol}


def grad_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-5,
               tol: float = 1e-4, samples: int = 64, seed: int = 0,
               floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn()`` with central differences.

    At most ``samples`` entries per parameter are probed (all of them when the
    parameter is smaller). Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    again = loss_fn()
    if loss.data.item() != again.data.item():
        raise NondeterministicLoss("loss_fn returned different values on identical inputs")
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    rng = np.random.default_rng(seed)
    errors, counts = {}, {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        size = flat.size
        picks = np.arange(size) if size <= samples else rng.choice(size, samples, replace=False)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().data.item()
            flat[i] = orig - eps
            down = loss_fn().data.item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        errors[name] = worst
        counts[name] = len(picks)
        p.grad = None
    return GradCheckReport(errors, counts, tol)
