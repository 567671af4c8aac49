"""Vector primitives, the linear embedding head, and the photo gallery.

All functions operate on 1-D float64 numpy arrays ("feature vectors").
Everything here is pure and side-effect free; Gallery and LinearHead are
frozen after construction so snapshots can be shared across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

#: Norms below this are treated as degenerate (zero) vectors.
DEGENERATE_NORM = 1e-12

#: Tolerance for the unit-norm invariant on gallery rows.
GALLERY_NORM_TOL = 1e-9


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Validate and convert to a 1-D finite float64 array."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InputError(f"{name} must be a non-empty 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InputError(f"{name} contains non-finite entries")
    return v


def l2_normalize(v, *, with_flag: bool = False):
    """Scale ``v`` to unit l2 norm, preserving direction.

    Vectors with norm below ``DEGENERATE_NORM`` cannot be normalized; they
    fall back to the first basis vector instead of raising, so callers inside
    a training loop never abort on an all-zero input.  Pass ``with_flag=True``
    to also receive a bool marking that fallback.
    """
    v = as_vector(v)
    # sqrt-of-sum so the single-vector and row-wise paths agree bit for bit
    norm = float(np.sqrt((v * v).sum()))
    if norm < DEGENERATE_NORM:
        out = np.zeros_like(v)
        out[0] = 1.0
        return (out, True) if with_flag else out
    out = v / norm
    return (out, False) if with_flag else out


def normalize_rows(rows: np.ndarray) -> np.ndarray:
    """Row-wise l2_normalize with the same degenerate fallback (near-zero
    rows become the first basis vector)."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] == 0:
        raise InputError(f"rows must be a 2-D array, got shape {rows.shape}")
    if not np.all(np.isfinite(rows)):
        raise InputError("rows contain non-finite entries")
    norms = np.sqrt((rows * rows).sum(axis=1))
    ok = norms >= DEGENERATE_NORM
    out = np.empty_like(rows)
    out[ok] = rows[ok] / norms[ok, None]
    if not ok.all():
        out[~ok] = 0.0
        out[~ok, 0] = 1.0
    return out


def euclidean_distance(u, v) -> float:
    """l2 distance between two equal-dimension vectors."""
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape != v.shape:
        raise InputError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    return float(np.linalg.norm(u - v))


@dataclass(frozen=True)
class LinearHead:
    """A fully-connected layer ``x -> W x + b`` mapping backbone features to
    the retrieval embedding space."""

    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray    # (out_dim,)

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] == 0 or w.shape[1] == 0:
            raise InputError(f"weight must be a 2-D matrix, got shape {w.shape}")
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise InputError(f"bias shape {b.shape} does not match weight {w.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InputError("head parameters contain non-finite entries")
        w = w.copy()
        b = b.copy()
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def linear(self, x: np.ndarray) -> np.ndarray:
        """Raw affine output ``W x + b`` (no normalization)."""
        x = as_vector(x, "x")
        if x.shape[0] != self.in_dim:
            raise InputError(f"input dim {x.shape[0]} != head in_dim {self.in_dim}")
        return self.weight @ x + self.bias


def embed(head: LinearHead, x) -> np.ndarray:
    """Unit-norm embedding ``l2_normalize(W x + b)``."""
    return l2_normalize(head.linear(x))


@dataclass(frozen=True)
class Gallery:
    """The frozen photo search space: unique ids plus an M x D matrix whose
    rows are unit-norm embeddings."""

    ids: tuple
    embeddings: np.ndarray  # (M, D), rows unit l2 norm

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if len(ids) < 2:
            raise InputError(f"gallery needs at least 2 photos, got {len(ids)}")
        if len(set(ids)) != len(ids):
            raise InputError("gallery ids are not unique")
        if emb.ndim != 2 or emb.shape[0] != len(ids):
            raise InputError(f"embeddings shape {emb.shape} does not match {len(ids)} ids")
        if not np.all(np.isfinite(emb)):
            raise InputError("gallery embeddings contain non-finite entries")
        norms = np.linalg.norm(emb, axis=1)
        bad = np.nonzero(np.abs(norms - 1.0) > GALLERY_NORM_TOL)[0]
        if bad.size:
            raise InputError(
                f"gallery row {bad[0]} has norm {norms[bad[0]]!r}, expected 1 within {GALLERY_NORM_TOL}"
            )
        emb = emb.copy()
        emb.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "embeddings", emb)

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def index_of(self, photo_id: str) -> int:
        try:
            return self.ids.index(photo_id)
        except ValueError:
            raise InputError(f"unknown photo id {photo_id!r}") from None
