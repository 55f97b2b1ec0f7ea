"""Adam optimizer with continuous exponential learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def learning_rate(step: int, lr0: float = 0.01, factor: float = 0.9, every: int = 10_000) -> float:
    """lr(t) = lr0 * factor^(t / every), continuous exponent."""
    return lr0 * factor ** (step / every)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def ensure(self, params) -> None:
        for name, arr in params:
            if name not in self.m:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)


def adam_step(state: AdamState, model, grads: dict, lr: float) -> None:
    """One bias-corrected Adam update applied to the model in place."""
    params = list(model.parameters())
    state.ensure(params)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, arr in params:
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        arr -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
