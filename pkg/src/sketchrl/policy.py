"""Diagonal Gaussian retrieval policy over embedding space.

The policy maps a raw sketch state to the mean of a Gaussian in embedding
space through the same affine layer the pretrained head uses.  Actions are
sampled before normalization; retrieval happens on the unit sphere, so the
caller normalizes the action (or the mean, when acting deterministically)
right before ranking.  Densities and score gradients are computed on the
raw, pre-normalization action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import LinearHead, as_vector, l2_normalize
from .errors import InputError

SIGMA_MIN = 1e-3
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PolicyGradient:
    """Gradient of a scalar objective w.r.t. the policy parameter groups."""

    d_weight: np.ndarray
    d_bias: np.ndarray
    d_sigma: np.ndarray

    def __post_init__(self):
        self.d_weight = np.asarray(self.d_weight, dtype=np.float64)
        self.d_bias = np.asarray(self.d_bias, dtype=np.float64)
        self.d_sigma = np.asarray(self.d_sigma, dtype=np.float64)
        if not (
            np.isfinite(self.d_weight).all()
            and np.isfinite(self.d_bias).all()
            and np.isfinite(self.d_sigma).all()
        ):
            raise InputError("gradient must be finite")

    @classmethod
    def zeros_like(cls, policy: "GaussianPolicy") -> "PolicyGradient":
        return cls(
            np.zeros_like(policy.weight),
            np.zeros_like(policy.bias),
            np.zeros_like(policy.sigma),
        )


@dataclass
class GaussianPolicy:
    """mu = W s + b with a state-independent per-dimension scale vector."""

    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray    # (out_dim,)
    sigma: np.ndarray   # (out_dim,), clamped to >= SIGMA_MIN

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        s = np.asarray(self.sigma, dtype=np.float64)
        if w.ndim != 2:
            raise InputError("weight must be 2-D (out_dim, in_dim)")
        if b.shape != (w.shape[0],):
            raise InputError(f"bias shape {b.shape} incompatible with weight {w.shape}")
        if s.shape != (w.shape[0],):
            raise InputError(f"sigma shape {s.shape} incompatible with weight {w.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all() and np.isfinite(s).all()):
            raise InputError("policy parameters must be finite")
        self.weight = w.copy()
        self.bias = b.copy()
        self.sigma = np.maximum(s, SIGMA_MIN)

    @classmethod
    def from_head(cls, head: LinearHead, sigma_init: float = 1.0) -> "GaussianPolicy":
        """Start from a pretrained head; sigma is flat at ``sigma_init``."""
        if sigma_init <= 0.0:
            raise InputError(f"sigma_init must be positive, got {sigma_init}")
        return cls(head.weight, head.bias, np.full(head.out_dim, float(sigma_init)))

    def to_head(self) -> LinearHead:
        return LinearHead(self.weight, self.bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.weight, self.bias, self.sigma)

    def clamp_sigma(self) -> None:
        np.maximum(self.sigma, SIGMA_MIN, out=self.sigma)

    def mean(self, state) -> np.ndarray:
        state = as_vector(state, "state")
        if state.shape[0] != self.in_dim:
            raise InputError(f"state dim {state.shape[0]} != policy in_dim {self.in_dim}")
        return self.weight @ state + self.bias

    def sample_action(self, state, *, rng: np.random.Generator | None = None, noise=None) -> tuple:
        """Draw a = mu + xi * sigma; returns (raw, normalized).

        Retrieval ranks with the normalized vector; densities and gradients
        are taken on the raw one.  Pass ``noise`` to inject xi directly.
        """
        mu = self.mean(state)
        if noise is None:
            if rng is None:
                raise InputError("sample_action needs an rng or an explicit noise vector")
            noise = rng.standard_normal(self.out_dim)
        noise = as_vector(noise, "noise")
        if noise.shape[0] != self.out_dim:
            raise InputError(f"noise dim {noise.shape[0]} != policy out_dim {self.out_dim}")
        raw = mu + noise * self.sigma
        return raw, l2_normalize(raw)

    def embed_mean(self, state) -> np.ndarray:
        """Deterministic retrieval query: the normalized mean action."""
        return l2_normalize(self.mean(state))

    def log_prob(self, state, action) -> float:
        action = as_vector(action, "action")
        mu = self.mean(state)
        if action.shape != mu.shape:
            raise InputError(f"action dim {action.shape[0]} != policy out_dim {self.out_dim}")
        z = (action - mu) / self.sigma
        return float(
            -0.5 * self.out_dim * LOG_2PI - np.log(self.sigma).sum() - 0.5 * (z * z).sum()
        )

    def log_prob_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        if states.ndim != 2 or states.shape[1] != self.in_dim:
            raise InputError("states must be (N, in_dim)")
        if actions.shape != (states.shape[0], self.out_dim):
            raise InputError("actions must be (N, out_dim)")
        mus = states @ self.weight.T + self.bias
        z = (actions - mus) / self.sigma
        return (
            -0.5 * self.out_dim * LOG_2PI
            - np.log(self.sigma).sum()
            - 0.5 * (z * z).sum(axis=1)
        )

    def log_prob_grad(self, state, action) -> PolicyGradient:
        """Analytic gradient of log_prob w.r.t. (weight, bias, sigma).

        d_bias  = (a - mu) / sigma^2
        d_weight = outer(d_bias, state)
        d_sigma = ((a - mu)^2 - sigma^2) / sigma^3
        """
        state = as_vector(state, "state")
        action = as_vector(action, "action")
        mu = self.mean(state)
        if action.shape != mu.shape:
            raise InputError(f"action dim {action.shape[0]} != policy out_dim {self.out_dim}")
        diff = action - mu
        var = self.sigma * self.sigma
        d_bias = diff / var
        d_weight = np.outer(d_bias, state)
        d_sigma = (diff * diff - var) / (var * self.sigma)
        return PolicyGradient(d_weight, d_bias, d_sigma)
