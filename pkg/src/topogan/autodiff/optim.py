"""Adam optimizer over named parameter dictionaries.

Parameters are treated as immutable tensors: a step returns a new dict of
replacement tensors, letting callers snapshot old parameters freely (for
checkpoints or reader threads) without aliasing surprises.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment estimates plus hyperparameters and step count."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"Adam learning rate must be positive, got {self.lr}")


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, Tensor]:
    """One bias-corrected Adam update; returns the replacement parameters."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    updated: dict[str, Tensor] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} does not match "
                             f"parameter '{name}' shape {p.data.shape}")
        if np.any(np.isnan(g)):
            raise FloatingPointError(f"adam_step: NaN gradient for parameter '{name}'")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        step_size = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        updated[name] = Tensor(p.data - step_size, requires_grad=True, name=p.name,
                               dtype=p.data.dtype.type)
    return updated
