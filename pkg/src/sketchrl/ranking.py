"""Rank computation against a gallery plus every retrieval metric we report.

Rank lists are plain numpy permutation arrays (gallery indices sorted by
ascending distance to a query).  Ties break toward the lower gallery index,
which keeps results bit-reproducible across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import Gallery, as_vector
from .errors import InputError

DISTANCE_METRICS = ("euclidean", "cosine")


def _distances(query: np.ndarray, gallery: Gallery, metric: str) -> np.ndarray:
    query = as_vector(query, "query")
    if query.shape[0] != gallery.dim:
        raise InputError(f"query dim {query.shape[0]} != gallery dim {gallery.dim}")
    if metric == "euclidean":
        return np.linalg.norm(gallery.embeddings - query, axis=1)
    if metric == "cosine":
        return 1.0 - gallery.embeddings @ query
    raise InputError(f"unknown distance metric {metric!r}")


def rank_list(query, gallery: Gallery, metric: str = "euclidean") -> np.ndarray:
    """Gallery indices sorted by ascending distance to ``query``.

    Equidistant rows keep ascending index order (stable sort).
    """
    d = _distances(query, gallery, metric)
    return np.argsort(d, kind="stable")


def rank_of(query, gallery: Gallery, target_id: str, metric: str = "euclidean") -> int:
    """1-based rank of ``target_id`` in the rank list for ``query``.

    Equal to 1 + (strictly closer rows) + (equidistant rows with lower index),
    i.e. exactly 1 + the target's position in ``rank_list``.
    """
    target = gallery.index_of(target_id)
    d = _distances(query, gallery, metric)
    dt = d[target]
    closer = int(np.count_nonzero(d < dt))
    tied_before = int(np.count_nonzero((d[:target] == dt)))
    return 1 + closer + tied_before


def distance_rows(queries: np.ndarray, gallery: Gallery, metric: str = "euclidean") -> np.ndarray:
    """Distances of many queries at once, (N, M).  Row i matches what the
    single-query path computes for queries[i] bit for bit."""
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != gallery.dim:
        raise InputError(f"queries must be (N, {gallery.dim})")
    if not np.isfinite(q).all():
        raise InputError("queries must be finite")
    if metric == "euclidean":
        return np.linalg.norm(gallery.embeddings[None, :, :] - q[:, None, :], axis=2)
    if metric == "cosine":
        return 1.0 - q @ gallery.embeddings.T
    raise InputError(f"unknown distance metric {metric!r}")


def batch_rank_of(queries: np.ndarray, gallery: Gallery, target_id: str, metric: str = "euclidean") -> np.ndarray:
    """rank_of for each row of ``queries``, same tie rule, as one array op."""
    target = gallery.index_of(target_id)
    d = distance_rows(queries, gallery, metric)
    dt = d[:, target][:, None]
    closer = (d < dt).sum(axis=1)
    tied_before = (d[:, :target] == dt).sum(axis=1)
    return (1 + closer + tied_before).astype(np.int64)


def batch_rank_lists(queries: np.ndarray, gallery: Gallery, metric: str = "euclidean") -> np.ndarray:
    """rank_list for each row of ``queries``; (N, M) with stable tie order."""
    d = distance_rows(queries, gallery, metric)
    return np.argsort(d, axis=1, kind="stable")


def _count_inversions(a: list) -> int:
    """Inversions of a sequence via bottom-up merge sort, O(n log n)."""
    n = len(a)
    buf = [0] * n
    inv = 0
    width = 1
    while width < n:
        two = 2 * width
        for lo in range(0, n - width, two):
            mid = lo + width
            hi = min(lo + two, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                ai = a[i]
                aj = a[j]
                if ai <= aj:
                    buf[k] = ai
                    i += 1
                else:
                    buf[k] = aj
                    j += 1
                    inv += mid - i
                k += 1
            if i < mid:
                buf[k:hi] = a[i:mid]
            elif j < hi:
                buf[k:hi] = a[j:hi]
            a[lo:hi] = buf[lo:hi]
        width = two
    return inv


def _as_rank_array(l, name: str) -> np.ndarray:
    arr = np.asarray(l)
    if arr.ndim != 1:
        raise InputError(f"{name} must be 1-D")
    if arr.size < 2:
        raise InputError(f"{name} must rank at least 2 items, got {arr.size}")
    if arr.dtype.kind not in "iu":
        raise InputError(f"{name} must hold integer indices")
    return arr.astype(np.int64, copy=False)


def kendall_tau_normalized(l1, l2) -> float:
    """Normalized Kendall-Tau distance between two rank lists.

    Counts pairwise order disagreements and divides by M(M-1)/2, so 0 means
    identical lists and 1 a full reversal.  The lists must order the same
    set of distinct indices.  Discordant pairs are counted in O(M log M) by
    inversion counting on the composed permutation.
    """
    p1 = _as_rank_array(l1, "l1")
    p2 = _as_rank_array(l2, "l2")
    if p1.size != p2.size:
        raise InputError(f"rank lists cover different index sets ({p1.size} vs {p2.size})")
    m = p1.size
    by_value1 = np.argsort(p1, kind="stable")
    by_value2 = np.argsort(p2, kind="stable")
    v1 = p1[by_value1]
    if np.any(v1[1:] == v1[:-1]):
        raise InputError("l1 repeats an index")
    if not np.array_equal(v1, p2[by_value2]):
        raise InputError("rank lists cover different index sets")
    # seq[j] = position in l1 of the item l2 puts at j; its inversions are
    # exactly the discordant pairs.
    seq = np.empty(m, dtype=np.int64)
    seq[by_value2] = by_value1
    discordant = _count_inversions(seq.tolist())
    return discordant / (m * (m - 1) // 2)


def acc_at_q(ranks, q: int) -> float:
    """Fraction of 1-based ranks that land in the top ``q``."""
    if q < 1:
        raise InputError(f"q must be >= 1, got {q}")
    arr = np.asarray(ranks, dtype=np.int64)
    if arr.size == 0:
        raise InputError("acc_at_q needs at least one rank")
    if arr.min() < 1:
        raise InputError("ranks are 1-based; found a value < 1")
    return float(np.count_nonzero(arr <= q) / arr.size)


def ranking_percentile(rank: int, m: int) -> float:
    """Linear rescaling of a 1-based rank to [0, 100]; rank 1 -> 100, rank M -> 0."""
    if m < 2:
        raise InputError(f"gallery size must be >= 2, got {m}")
    if not 1 <= rank <= m:
        raise InputError(f"rank {rank} out of range 1..{m}")
    return 100.0 * (m - rank) / (m - 1)


@dataclass(frozen=True)
class EpisodeRankTrace:
    """Per-step retrieval outcome of one sketch episode: the paired photo's
    1-based rank and its ranking percentile at each of the T render steps."""

    ranks: np.ndarray        # (T,) int
    percentiles: np.ndarray  # (T,) float in [0, 100]

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=np.int64)
        pct = np.asarray(self.percentiles, dtype=np.float64)
        if ranks.ndim != 1 or ranks.size == 0 or pct.shape != ranks.shape:
            raise InputError("trace needs parallel 1-D ranks and percentiles")
        if ranks.min() < 1:
            raise InputError("ranks are 1-based")
        if pct.min() < 0.0 or pct.max() > 100.0:
            raise InputError("percentiles must lie in [0, 100]")
        ranks = ranks.copy()
        pct = pct.copy()
        ranks.flags.writeable = False
        pct.flags.writeable = False
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "percentiles", pct)

    @property
    def steps(self) -> int:
        return self.ranks.size


def mean_episode_curves(traces) -> tuple:
    """Early-retrieval summary over a set of episode traces.

    Returns (mA, mB): mA is the mean over episodes of the per-step mean
    ranking percentile (range [0, 100]); mB the mean of the per-step mean
    inverse rank (range (0, 1]).  The per-step mean is the discrete area
    under the rank-versus-step curve.
    """
    traces = list(traces)
    if not traces:
        raise InputError("mean_episode_curves needs at least one trace")
    steps = traces[0].steps
    if any(t.steps != steps for t in traces):
        raise InputError("traces have ragged lengths")
    m_a = float(np.mean([t.percentiles.mean() for t in traces]))
    m_b = float(np.mean([(1.0 / t.ranks).mean() for t in traces]))
    return m_a, m_b


def stroke_backlash_index(percentiles) -> float:
    """Mean magnitude of per-step percentile drops over an episode.

    Zero iff the percentile sequence never decreases; larger values mean a
    later sketch step pushed the paired photo down the rank list.
    """
    pct = np.asarray(percentiles, dtype=np.float64)
    if pct.ndim != 1 or pct.size < 2:
        raise InputError("stroke_backlash_index needs at least 2 steps")
    deltas = np.diff(pct)
    return float(np.abs(np.minimum(deltas, 0.0)).sum() / (pct.size - 1))
