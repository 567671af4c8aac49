"""Actor-only policy-gradient fine-tuning against rank rewards.

One training epoch collects rollouts from a batch of sketch episodes under
the current policy snapshot, then reuses that batch for a few surrogate
ascent steps.  There is no critic: the raw per-step reward is the
advantage.  Two objectives are available, the clipped importance-ratio
surrogate (default) and the plain log-prob * reward baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .embedding import Gallery, LinearHead, normalize_rows
from .errors import InputError
from .evaluate import evaluate_model
from .optim import AdamState, adam_step
from .policy import LOG_2PI, SIGMA_MIN, GaussianPolicy, PolicyGradient
from .rewards import RewardConfig, episode_rewards
from .ranking import batch_rank_lists, batch_rank_of

log = logging.getLogger(__name__)

LOG_RATIO_CLAMP = 30.0

OBJECTIVES = ("ppo_clip", "vanilla_pg")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    episodes_per_batch: int = 16
    inner_epochs: int = 4
    clip_epsilon: float = 0.2
    lr_init: float = 1e-3
    lr_drop_epoch: int = 100     # last epoch still at lr_init
    lr_after_drop: float = 1e-4
    objective: str = "ppo_clip"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    sigma_init: float = 1.0
    reward_to_go: bool = False   # replace R_t by the within-episode suffix sum
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise InputError(f"epochs must be >= 0, got {self.epochs}")
        if self.episodes_per_batch < 1 or self.inner_epochs < 1:
            raise InputError("episodes_per_batch and inner_epochs must be >= 1")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise InputError(f"clip_epsilon must lie in (0, 1), got {self.clip_epsilon}")
        if self.objective not in OBJECTIVES:
            raise InputError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.lr_init <= 0.0 or self.lr_after_drop <= 0.0 or self.sigma_init <= 0.0:
            raise InputError("learning rates and sigma_init must be positive")

    def lr_at(self, epoch: int) -> float:
        return self.lr_init if epoch <= self.lr_drop_epoch else self.lr_after_drop


@dataclass
class RolloutBatch:
    """Flattened step records from one collection pass, plus episode extents."""

    states: np.ndarray         # (N, in_dim)
    actions: np.ndarray        # (N, out_dim), raw pre-normalization samples
    old_log_probs: np.ndarray  # (N,), densities under the collecting policy
    rewards: np.ndarray        # (N,)
    episode_lengths: list      # per-episode step counts, sums to N

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.old_log_probs = np.asarray(self.old_log_probs, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        n = self.states.shape[0]
        if self.states.ndim != 2 or self.actions.ndim != 2 or self.actions.shape[0] != n:
            raise InputError("states and actions must be parallel 2-D arrays")
        if self.old_log_probs.shape != (n,) or self.rewards.shape != (n,):
            raise InputError("log probs and rewards must be parallel to states")
        if sum(self.episode_lengths) != n:
            raise InputError("episode_lengths do not cover the batch")
        for arr in (self.states, self.actions, self.old_log_probs, self.rewards):
            if not np.isfinite(arr).all():
                raise InputError("rollout batch contains non-finite values")

    @property
    def size(self) -> int:
        return self.states.shape[0]


def collect_rollouts(
    policy: GaussianPolicy,
    episodes,
    gallery: Gallery,
    reward_config: RewardConfig,
    rng: np.random.Generator,
    *,
    reward_to_go: bool = False,
) -> RolloutBatch:
    """Sample one action per step of every episode and score it.

    Ranking uses the normalized action; the stored log-prob is of the raw
    action under the collecting policy.  Kendall-Tau rank lists are only
    materialized when the global reward weight is active.
    """
    episodes = list(episodes)
    if not episodes:
        raise InputError("collect_rollouts needs at least one episode")
    need_lists = reward_config.gamma2 > 0.0
    states_chunks, action_chunks, reward_chunks, lengths = [], [], [], []
    for ep in episodes:
        states = np.asarray(ep.states, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] < 1:
            raise InputError(f"episode {ep.episode_id!r} has no steps")
        t_total = states.shape[0]
        mus = states @ policy.weight.T + policy.bias
        noise = rng.standard_normal((t_total, policy.out_dim))
        raw = mus + noise * policy.sigma
        queries = normalize_rows(raw)
        if need_lists:
            lists = batch_rank_lists(queries, gallery)
            target = gallery.index_of(ep.paired_photo_id)
            ranks = 1 + np.argmax(lists == target, axis=1)
        else:
            lists = None
            ranks = batch_rank_of(queries, gallery, ep.paired_photo_id)
        rewards = episode_rewards(
            list(lists) if lists is not None else None, ranks.tolist(), reward_config
        )
        if reward_to_go:
            rewards = np.cumsum(rewards[::-1])[::-1]
        states_chunks.append(states)
        action_chunks.append(raw)
        reward_chunks.append(rewards)
        lengths.append(t_total)
    all_states = np.concatenate(states_chunks)
    all_actions = np.concatenate(action_chunks)
    old_log_probs = policy.log_prob_batch(all_states, all_actions)
    return RolloutBatch(
        states=all_states,
        actions=all_actions,
        old_log_probs=old_log_probs,
        rewards=np.concatenate(reward_chunks),
        episode_lengths=lengths,
    )


def importance_ratio(policy: GaussianPolicy, state, raw_action, old_log_prob: float) -> float:
    """exp(log pi_current - log pi_old), with the log-ratio clamped to +/-30."""
    log_ratio = policy.log_prob(state, raw_action) - old_log_prob
    return float(np.exp(np.clip(log_ratio, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)))


def _batch_stats(batch: RolloutBatch, policy: GaussianPolicy):
    """Per-step log-probs and the score-gradient building blocks."""
    mus = batch.states @ policy.weight.T + policy.bias
    sigma = policy.sigma
    diff = batch.actions - mus
    z = diff / sigma
    log_probs = (
        -0.5 * policy.out_dim * LOG_2PI
        - np.log(sigma).sum()
        - 0.5 * (z * z).sum(axis=1)
    )
    d_bias_rows = diff / (sigma * sigma)                       # dlogp/db per step
    d_sigma_rows = (diff * diff - sigma * sigma) / sigma ** 3  # dlogp/dsigma per step
    return log_probs, d_bias_rows, d_sigma_rows


def _weighted_gradient(batch: RolloutBatch, coeff: np.ndarray, d_bias_rows, d_sigma_rows) -> PolicyGradient:
    """Mean over steps of coeff_t * dlogp_t/dTheta."""
    scale = coeff / batch.size
    d_bias = scale @ d_bias_rows
    d_weight = (scale[:, None] * d_bias_rows).T @ batch.states
    d_sigma = scale @ d_sigma_rows
    return PolicyGradient(d_weight, d_bias, d_sigma)


def ppo_clip_objective(batch: RolloutBatch, policy: GaussianPolicy, clip_epsilon: float) -> tuple:
    """Mean over steps of min(m_t R_t, clip(m_t, 1-eps, 1+eps) R_t), with its
    exact gradient.

    Steps where the min selects the flat clipped branch, or where the
    log-ratio clamp is active, contribute zero gradient; everywhere else the
    contribution is R_t * m_t * dlogp_t/dTheta.
    """
    if not 0.0 < clip_epsilon < 1.0:
        raise InputError(f"clip_epsilon must lie in (0, 1), got {clip_epsilon}")
    log_probs, d_bias_rows, d_sigma_rows = _batch_stats(batch, policy)
    raw_log_ratio = log_probs - batch.old_log_probs
    ratio = np.exp(np.clip(raw_log_ratio, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))
    unclipped = ratio * batch.rewards
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * batch.rewards
    objective = float(np.minimum(unclipped, clipped).mean())
    live = (unclipped <= clipped) & (np.abs(raw_log_ratio) < LOG_RATIO_CLAMP)
    coeff = np.where(live, batch.rewards * ratio, 0.0)
    return objective, _weighted_gradient(batch, coeff, d_bias_rows, d_sigma_rows)


def vanilla_pg_objective(batch: RolloutBatch, policy: GaussianPolicy) -> tuple:
    """Mean over steps of logp_t * R_t and its gradient mean(R_t * dlogp_t)."""
    log_probs, d_bias_rows, d_sigma_rows = _batch_stats(batch, policy)
    objective = float((log_probs * batch.rewards).mean())
    return objective, _weighted_gradient(batch, batch.rewards, d_bias_rows, d_sigma_rows)


def apply_update(policy: GaussianPolicy, grad: PolicyGradient, adam: AdamState, lr: float) -> None:
    """Ascent step on all three parameter groups, then the sigma floor."""
    new = adam_step(
        [policy.weight, policy.bias, policy.sigma],
        [grad.d_weight, grad.d_bias, grad.d_sigma],
        adam,
        lr,
    )
    policy.weight, policy.bias, policy.sigma = new
    policy.clamp_sigma()


def train(
    config: TrainConfig,
    pretrained_head: LinearHead,
    episodes,
    gallery: Gallery,
    reward_config: RewardConfig,
    *,
    eval_episodes=None,
    eval_metric: str = "euclidean",
) -> tuple:
    """Fine-tune a policy initialized from the pretrained head.

    The gallery stays frozen throughout.  Returns (policy, history) where
    history holds one row per epoch plus a leading epoch-0 row with the
    initial deterministic evaluation (its mean_reward is None since nothing
    was collected yet).  Evaluation runs on ``eval_episodes`` when given,
    else on the training episodes.
    """
    episodes = list(episodes)
    if not episodes:
        raise InputError("train needs at least one episode")
    eval_eps = list(eval_episodes) if eval_episodes is not None else episodes
    policy = GaussianPolicy.from_head(pretrained_head, config.sigma_init)
    rng = np.random.default_rng(config.seed)
    adam = AdamState.for_params(
        [policy.weight, policy.bias, policy.sigma],
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    )
    history = [_history_row(0, None, policy, eval_eps, gallery, eval_metric)]
    for epoch in range(1, config.epochs + 1):
        take = min(config.episodes_per_batch, len(episodes))
        picked = rng.choice(len(episodes), size=take, replace=False)
        batch = collect_rollouts(
            policy,
            [episodes[i] for i in picked],
            gallery,
            reward_config,
            rng,
            reward_to_go=config.reward_to_go,
        )
        lr = config.lr_at(epoch)
        for _ in range(config.inner_epochs):
            if config.objective == "ppo_clip":
                _, grad = ppo_clip_objective(batch, policy, config.clip_epsilon)
            else:
                _, grad = vanilla_pg_objective(batch, policy)
            apply_update(policy, grad, adam, lr)
        row = _history_row(epoch, float(batch.rewards.mean()), policy, eval_eps, gallery, eval_metric)
        history.append(row)
        if epoch % 50 == 0 or epoch == config.epochs:
            log.info(
                "epoch %d: mean_reward=%.4f mB=%.4f", epoch, row["mean_reward"], row["mB"]
            )
    return policy, history


HISTORY_COLUMNS = ("epoch", "mean_reward", "mA", "mB", "acc1", "acc5", "acc10", "sbi")


def _history_row(epoch, mean_reward, policy, eval_eps, gallery, metric) -> dict:
    res = evaluate_model(policy, eval_eps, gallery, metric=metric)
    return {
        "epoch": epoch,
        "mean_reward": mean_reward,
        "mA": res.m_a,
        "mB": res.m_b,
        "acc1": res.acc1,
        "acc5": res.acc5,
        "acc10": res.acc10,
        "sbi": res.sbi,
    }
