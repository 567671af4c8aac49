"""Per-step rewards: local rank payoff, global rank-list consistency, and
their weighted mix.

The global term compares Kendall-Tau distances of consecutive rank-list
pairs and penalizes rising churn.  Steps without both neighbours (the first
and last of an episode) get a global term of zero: a missing comparison
carries no evidence of inconsistency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .ranking import kendall_tau_normalized

LOCAL_SCHEMES = ("inverse_rank", "inverse_sqrt_rank", "neg_rank", "threshold")


@dataclass(frozen=True)
class RewardConfig:
    scheme: str = "inverse_rank"
    gamma1: float = 1.0
    gamma2: float = 1e-4
    threshold_q: int = 5  # only read by the threshold scheme

    def __post_init__(self):
        if self.scheme not in LOCAL_SCHEMES:
            raise InputError(f"unknown reward scheme {self.scheme!r}; expected one of {LOCAL_SCHEMES}")
        if self.gamma1 < 0.0 or self.gamma2 < 0.0:
            raise InputError("gamma1 and gamma2 must be >= 0")
        if self.threshold_q < 1:
            raise InputError(f"threshold_q must be >= 1, got {self.threshold_q}")


def local_reward(rank: int, scheme: str = "inverse_rank", q: int = 5) -> float:
    """Payoff for the paired photo sitting at ``rank`` (1-based) this step."""
    if rank < 1:
        raise InputError(f"rank must be >= 1, got {rank}")
    if scheme == "inverse_rank":
        return 1.0 / rank
    if scheme == "inverse_sqrt_rank":
        return 1.0 / math.sqrt(rank)
    if scheme == "neg_rank":
        return -float(rank)
    if scheme == "threshold":
        if q < 1:
            raise InputError(f"q must be >= 1, got {q}")
        return 1.0 if rank <= q else 0.0
    raise InputError(f"unknown reward scheme {scheme!r}; expected one of {LOCAL_SCHEMES}")


def global_reward(tau_prev: float, tau_curr: float) -> float:
    """-max(0, tau_curr - tau_prev): punish growing rank-list churn, never reward it."""
    for name, tau in (("tau_prev", tau_prev), ("tau_curr", tau_curr)):
        if not 0.0 <= tau <= 1.0:
            raise InputError(f"{name} must lie in [0, 1], got {tau}")
    return -max(0.0, tau_curr - tau_prev)


def episode_rewards(rank_lists, ranks, config: RewardConfig) -> np.ndarray:
    """Combined per-step rewards R_t = gamma1 * local_t + gamma2 * global_t.

    ``rank_lists`` may be None when gamma2 == 0; the Kendall-Tau pass is
    skipped entirely in that case.
    """
    ranks = list(ranks)
    t_total = len(ranks)
    if t_total < 1:
        raise InputError("episode_rewards needs at least one step")
    local = np.array(
        [config.gamma1 * local_reward(r, config.scheme, config.threshold_q) for r in ranks]
    )
    if config.gamma2 == 0.0 or t_total == 1:
        return local
    if rank_lists is None:
        raise InputError("rank_lists are required when gamma2 > 0")
    rank_lists = list(rank_lists)
    if len(rank_lists) != t_total:
        raise InputError(
            f"got {len(rank_lists)} rank lists for {t_total} ranks"
        )
    taus = [
        kendall_tau_normalized(rank_lists[i], rank_lists[i + 1])
        for i in range(t_total - 1)
    ]
    out = local
    for t in range(1, t_total - 1):
        out[t] += config.gamma2 * global_reward(taus[t - 1], taus[t])
    return out
