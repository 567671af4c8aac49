"""Deterministic evaluation of a retrieval model over sketch episodes.

The model acts without sampling: each state is mapped through the affine
head and the output is unit-normalized before ranking.  Works for a bare
pretrained head and for a fine-tuned policy alike (the policy contributes
its mean head; sigma plays no role at eval time).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import Gallery, LinearHead, normalize_rows
from .errors import InputError
from .policy import GaussianPolicy
from .ranking import (
    EpisodeRankTrace,
    acc_at_q,
    batch_rank_lists,
    batch_rank_of,
    mean_episode_curves,
    stroke_backlash_index,
)
from .rewards import RewardConfig, episode_rewards


def query_rows(model, states) -> np.ndarray:
    """Normalized deterministic queries for every state row."""
    if isinstance(model, (GaussianPolicy, LinearHead)):
        weight, bias = model.weight, model.bias
    else:
        raise InputError(f"cannot evaluate object of type {type(model).__name__}")
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != weight.shape[1]:
        raise InputError(f"states must be (T, {weight.shape[1]})")
    return normalize_rows(states @ weight.T + bias)


@dataclass
class EvalResult:
    traces: list                      # EpisodeRankTrace per episode
    m_a: float                        # mean ranking percentile, [0, 100]
    m_b: float                        # mean inverse rank, (0, 1]
    acc1: float
    acc5: float
    acc10: float
    sbi: float                        # backlash of the mean percentile curve
    mean_reward: float | None         # None when no reward config was given
    percentile_curve: np.ndarray      # (T,) mean percentile per step
    inverse_rank_curve: np.ndarray    # (T,) mean inverse rank per step


def evaluate_model(
    model,
    episodes,
    gallery: Gallery,
    *,
    metric: str = "euclidean",
    reward_config: RewardConfig | None = None,
) -> EvalResult:
    """Run every episode deterministically and aggregate retrieval metrics.

    acc@q is measured at the final render step.  The backlash index is
    taken on the step-mean percentile curve.  When ``reward_config`` is
    given, per-step rewards are also accumulated (this is what the reward
    ablation harness reports).
    """
    episodes = list(episodes)
    if not episodes:
        raise InputError("evaluate_model needs at least one episode")
    m = gallery.size
    traces = []
    reward_chunks = []
    for ep in episodes:
        queries = query_rows(model, ep.states)
        ranks = batch_rank_of(queries, gallery, ep.paired_photo_id, metric)
        percentiles = 100.0 * (m - ranks) / (m - 1)
        traces.append(EpisodeRankTrace(ranks, percentiles))
        if reward_config is not None:
            lists = None
            if reward_config.gamma2 > 0.0:
                lists = list(batch_rank_lists(queries, gallery, metric))
            reward_chunks.append(episode_rewards(lists, ranks.tolist(), reward_config))
    m_a, m_b = mean_episode_curves(traces)
    final_ranks = [int(t.ranks[-1]) for t in traces]
    percentile_curve = np.stack([t.percentiles for t in traces]).mean(axis=0)
    inverse_rank_curve = np.stack([1.0 / t.ranks for t in traces]).mean(axis=0)
    sbi = stroke_backlash_index(percentile_curve) if percentile_curve.size >= 2 else 0.0
    mean_reward = None
    if reward_chunks:
        mean_reward = float(np.concatenate(reward_chunks).mean())
    return EvalResult(
        traces=traces,
        m_a=m_a,
        m_b=m_b,
        acc1=acc_at_q(final_ranks, 1),
        acc5=acc_at_q(final_ranks, 5),
        acc10=acc_at_q(final_ranks, 10),
        sbi=sbi,
        mean_reward=mean_reward,
        percentile_curve=percentile_curve,
        inverse_rank_curve=inverse_rank_curve,
    )
