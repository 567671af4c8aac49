"""Stage one: train the shared embedding head with a triplet hinge loss.

Sketch states and photo features go through the same affine head followed
by l2 normalization; the loss pulls a sketch anchor toward its paired photo
and away from a random non-paired one.  The trained head then embeds the
photo gallery once, and those rows stay frozen for the whole RL stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .embedding import DEGENERATE_NORM, Gallery, LinearHead, as_vector, embed, normalize_rows
from .errors import InputError
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Triplet:
    anchor: np.ndarray    # sketch feature
    positive: np.ndarray  # paired photo feature
    negative: np.ndarray  # some other photo feature

    def __post_init__(self):
        a = as_vector(self.anchor, "anchor")
        p = as_vector(self.positive, "positive")
        n = as_vector(self.negative, "negative")
        if not (a.shape == p.shape == n.shape):
            raise InputError("triplet members must share one dimension")
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "positive", p)
        object.__setattr__(self, "negative", n)


@dataclass(frozen=True)
class PretrainConfig:
    margin: float = 0.3
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-4
    use_partial_anchors: bool = False  # off: final-step anchors; on: uniform random step
    embedding_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0.0:
            raise InputError(f"margin must be positive, got {self.margin}")
        if self.epochs < 0:
            raise InputError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0.0:
            raise InputError(f"lr must be positive, got {self.lr}")
        if self.embedding_dim < 1:
            raise InputError(f"embedding_dim must be >= 1, got {self.embedding_dim}")


def triplet_loss(head: LinearHead, t: Triplet, margin: float) -> float:
    """max(0, margin + dist(anchor, positive) - dist(anchor, negative))
    measured between unit embeddings."""
    if margin <= 0.0:
        raise InputError(f"margin must be positive, got {margin}")
    a = embed(head, t.anchor)
    p = embed(head, t.positive)
    n = embed(head, t.negative)
    beta_pos = float(np.linalg.norm(a - p))
    beta_neg = float(np.linalg.norm(a - n))
    return max(0.0, margin + beta_pos - beta_neg)


def _norm_backprop(pre: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Pull a gradient back through y -> y/||y||: J = (I - u u^T)/||y||.

    Degenerate inputs (norm below the l2_normalize floor) get a zero
    gradient; the fallback output is locally constant there.
    """
    norm = float(np.linalg.norm(pre))
    if norm < DEGENERATE_NORM:
        return np.zeros_like(pre)
    unit = pre / norm
    return (grad_unit - unit * float(unit @ grad_unit)) / norm


def triplet_grad(head: LinearHead, t: Triplet, margin: float) -> tuple:
    """Exact (d_weight, d_bias) of triplet_loss.

    Zero on an inactive hinge.  The distance terms use the subgradient 0 at
    zero distance, so anchor == positive contributes nothing through the
    positive branch.
    """
    if margin <= 0.0:
        raise InputError(f"margin must be positive, got {margin}")
    pre = {name: head.linear(getattr(t, name)) for name in ("anchor", "positive", "negative")}
    unit = {}
    for name, y in pre.items():
        norm = float(np.linalg.norm(y))
        unit[name] = y / norm if norm >= DEGENERATE_NORM else _fallback(y)
    diff_pos = unit["anchor"] - unit["positive"]
    diff_neg = unit["anchor"] - unit["negative"]
    beta_pos = float(np.linalg.norm(diff_pos))
    beta_neg = float(np.linalg.norm(diff_neg))
    d_weight = np.zeros_like(head.weight)
    d_bias = np.zeros_like(head.bias)
    if margin + beta_pos - beta_neg <= 0.0:
        return d_weight, d_bias
    grad_unit = {name: np.zeros_like(d_bias) for name in pre}
    if beta_pos > 0.0:
        grad_unit["anchor"] += diff_pos / beta_pos
        grad_unit["positive"] -= diff_pos / beta_pos
    if beta_neg > 0.0:
        grad_unit["anchor"] -= diff_neg / beta_neg
        grad_unit["negative"] += diff_neg / beta_neg
    for name in pre:
        g_pre = _norm_backprop(pre[name], grad_unit[name])
        d_weight += np.outer(g_pre, getattr(t, name))
        d_bias += g_pre
    return d_weight, d_bias


def _fallback(y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[0] = 1.0
    return out


def init_head(in_dim: int, out_dim: int, rng: np.random.Generator) -> LinearHead:
    """Small uniform weight init (+/- 1/sqrt(in_dim)), zero bias."""
    if in_dim < 1 or out_dim < 1:
        raise InputError("head dims must be >= 1")
    bound = 1.0 / np.sqrt(in_dim)
    weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return LinearHead(weight, np.zeros(out_dim))


def pretrain(config: PretrainConfig, episodes, photo_ids, photo_features) -> LinearHead:
    """Adam-train a head on triplets drawn from the episode/photo pairing.

    One triplet per episode per epoch: the anchor is the final-step sketch
    state (or a uniformly random step with use_partial_anchors), the
    positive its paired photo, the negative a uniformly random other photo.
    """
    episodes = list(episodes)
    photo_ids = list(photo_ids)
    feats = np.asarray(photo_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != len(photo_ids):
        raise InputError("photo_features must be (M, feature_dim) aligned with photo_ids")
    if feats.shape[0] < 2:
        raise InputError("need at least 2 photos to form negatives")
    if not episodes:
        raise InputError("pretrain needs at least one episode")
    index_of = {pid: i for i, pid in enumerate(photo_ids)}
    if len(index_of) != len(photo_ids):
        raise InputError("photo ids must be unique")
    paired = []
    for ep in episodes:
        if ep.paired_photo_id not in index_of:
            raise InputError(f"episode {ep.episode_id!r} pairs unknown photo {ep.paired_photo_id!r}")
        paired.append(index_of[ep.paired_photo_id])
    rng = np.random.default_rng(config.seed)
    head = init_head(feats.shape[1], config.embedding_dim, rng)
    weight, bias = head.weight.copy(), head.bias.copy()
    adam = AdamState.for_params([weight, bias])
    m = feats.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(len(episodes))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = order[start:start + config.batch_size]
            head = LinearHead(weight, bias)
            gw = np.zeros_like(weight)
            gb = np.zeros_like(bias)
            for idx in chunk:
                ep = episodes[idx]
                states = np.asarray(ep.states, dtype=np.float64)
                if config.use_partial_anchors:
                    anchor = states[rng.integers(states.shape[0])]
                else:
                    anchor = states[-1]
                neg = int(rng.integers(m - 1))
                if neg >= paired[idx]:
                    neg += 1
                trip = Triplet(anchor, feats[paired[idx]], feats[neg])
                dw, db = triplet_grad(head, trip, config.margin)
                gw += dw
                gb += db
                epoch_loss += triplet_loss(head, trip, config.margin)
            scale = -1.0 / len(chunk)  # descend the mean loss
            weight, bias = adam_step([weight, bias], [scale * gw, scale * gb], adam, config.lr)
        if (epoch + 1) % 20 == 0 or epoch + 1 == config.epochs:
            log.info("pretrain epoch %d: mean loss %.4f", epoch + 1, epoch_loss / len(episodes))
    return LinearHead(weight, bias)


def build_gallery(head: LinearHead, photo_features, ids) -> Gallery:
    """Embed every photo with the (now frozen) head, preserving input order."""
    feats = np.asarray(photo_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != head.in_dim:
        raise InputError(f"photo_features must be (M, {head.in_dim})")
    rows = normalize_rows(feats @ head.weight.T + head.bias)
    return Gallery(tuple(ids), rows)
