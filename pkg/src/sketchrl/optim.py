"""Minimal Adam optimizer over lists of parameter arrays.

Written for the two training loops here (triplet pretraining, policy
fine-tuning), both of which hand in an explicit ascent direction; descent
callers negate their gradient.  Bias correction follows the standard
formulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        if not params:
            raise InputError("need at least one parameter group")
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise InputError("betas must lie in [0, 1)")
        if eps <= 0.0:
            raise InputError("eps must be positive")
        state = cls(beta1=beta1, beta2=beta2, eps=eps)
        state.m = [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params]
        state.v = [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params]
        return state


def adam_step(params, ascent_direction, state: AdamState, lr: float) -> list:
    """One bias-corrected Adam step ALONG the given direction.

    Returns new parameter arrays; ``state`` is advanced in place.  A zero
    direction from a fresh state leaves parameters unchanged.
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]
    grads = [np.asarray(g, dtype=np.float64) for g in ascent_direction]
    if len(params) != len(state.m) or len(grads) != len(state.m):
        raise InputError("parameter/gradient group count does not match optimizer state")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != m.shape or g.shape != m.shape:
            raise InputError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        out.append(p + lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out
