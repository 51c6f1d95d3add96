"""Bias-corrected Adam over dictionaries of named arrays."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One Adam update. Returns ``(new_params, state)``; inputs are not modified.

    Only the keys present in ``grads`` are updated, which is how parameter
    groups get frozen.
    """
    for key, g in grads.items():
        if key not in params:
            raise ValueError(f"gradient for unknown parameter {key!r}")
        if np.shape(g) != np.shape(params[key]):
            raise ValueError(
                f"shape mismatch for {key!r}: param {np.shape(params[key])}, grad {np.shape(g)}"
            )
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    out = dict(params)
    for key, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        else:
            v = state.v[key]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[key], state.v[key] = m, v
        out[key] = params[key] - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out, state
