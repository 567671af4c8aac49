"""Synthetic sketch episodes at desk scale.

Two generation modes share one episode shape (T per-step feature vectors
paired with a gallery photo):

* latent: photos are random unit vectors; a sketch walks from noise toward
  its paired photo's vector as the render fraction t/T grows.  Optional
  outlier steps yank an intermediate state toward a distractor photo.
* geometric: photos are random polylines rasterized onto a grid; sketches
  are jittered redraws revealed prefix by prefix through the rendering
  operator, with grid-pooled pixel features standing in for a backbone.

Episode generation is deterministic: episode i derives its own generator
from a 64-bit FNV-1a hash of "<seed>,<i>", so datasets are reproducible
regardless of generation order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .embedding import l2_normalize, normalize_rows
from .errors import InputError

log = logging.getLogger(__name__)

SIM_MODES = ("latent", "geometric")


@dataclass(frozen=True)
class StrokePoint:
    x: float
    y: float
    pen_lift: bool = False  # True: the stroke ends after this point

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise InputError(f"stroke point ({self.x}, {self.y}) outside the unit square")


@dataclass(frozen=True)
class StrokeSketch:
    points: tuple  # of StrokePoint

    def __post_init__(self):
        pts = tuple(self.points)
        if len(pts) < 2:
            raise InputError(f"a sketch needs at least 2 points, got {len(pts)}")
        if not pts[-1].pen_lift:
            raise InputError("the final stroke point must carry a pen lift")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def strokes(self) -> list:
        """Maximal pen-down runs, each ending at its lift point."""
        runs, start = [], 0
        for i, pt in enumerate(self.points):
            if pt.pen_lift:
                runs.append(self.points[start:i + 1])
                start = i + 1
        return runs


@dataclass(frozen=True)
class SketchEpisode:
    episode_id: str
    paired_photo_id: str
    states: np.ndarray              # (T, feature_dim)
    strokes: StrokeSketch | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] < 1:
            raise InputError("states must be a (T >= 1, feature_dim) array")
        if not np.isfinite(states).all():
            raise InputError(f"episode {self.episode_id!r} has non-finite states")
        states = states.copy()
        states.flags.writeable = False
        object.__setattr__(self, "states", states)

    @property
    def steps(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class SimConfig:
    mode: str = "latent"
    gallery_size: int = 100
    train_episodes: int = 200
    test_episodes: int = 50
    steps: int = 20
    feature_dim: int = 32          # latent mode; geometric derives its own
    noise_scale: float = 0.5       # latent: noise vector length; geometric: jitter sd
    outlier_prob: float = 0.0      # latent mode only
    outlier_magnitude: float = 0.8
    grid_size: int = 16
    pool_size: int = 4
    points_per_sketch: int = 60
    strokes_per_sketch: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SIM_MODES:
            raise InputError(f"unknown sim mode {self.mode!r}; expected one of {SIM_MODES}")
        if self.gallery_size < 2:
            raise InputError("gallery_size must be >= 2")
        if self.train_episodes < 0 or self.test_episodes < 0:
            raise InputError("episode counts must be >= 0")
        if self.steps < 1:
            raise InputError("steps must be >= 1")
        if self.feature_dim < 1:
            raise InputError("feature_dim must be >= 1")
        if self.noise_scale < 0.0:
            raise InputError("noise_scale must be >= 0")
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise InputError("outlier_prob must lie in [0, 1]")
        if not 0.0 <= self.outlier_magnitude <= 1.0:
            raise InputError("outlier_magnitude must lie in [0, 1]")
        if self.grid_size < 1 or self.pool_size < 1 or self.grid_size % self.pool_size:
            raise InputError("grid_size must be a positive multiple of pool_size")
        if self.points_per_sketch < 2 or self.strokes_per_sketch < 1:
            raise InputError("need points_per_sketch >= 2 and strokes_per_sketch >= 1")


@dataclass
class SynthDataset:
    photo_ids: list
    photo_features: np.ndarray      # (M, feature_dim)
    train: list = field(default_factory=list)  # SketchEpisode
    test: list = field(default_factory=list)
    feature_dim: int = 0
    steps: int = 0


FNV_OFFSET = 0xcbf29ce484222325
FNV_PRIME = 0x100000001b3


def fnv1a_64(text: str) -> int:
    """64-bit FNV-1a over the UTF-8 bytes of ``text``."""
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def episode_seed(master_seed: int, episode_index: int) -> int:
    return fnv1a_64(f"{master_seed},{episode_index}")


def rasterize(sketch: StrokeSketch, k: int, grid_size: int) -> np.ndarray:
    """Render the first ``k`` stroke points onto a binary grid.

    Consecutive retained points are joined by 1-cell Bresenham lines unless
    the earlier point lifts the pen.  Coordinates scale to cell centers via
    round(coord * (grid_size - 1)); the grid is indexed [row=y, col=x].
    """
    if grid_size < 1:
        raise InputError(f"grid_size must be >= 1, got {grid_size}")
    if not 0 <= k <= len(sketch):
        raise InputError(f"k={k} outside 0..{len(sketch)}")
    grid = np.zeros((grid_size, grid_size), dtype=np.uint8)
    pts = sketch.points[:k]
    scale = grid_size - 1
    cells = [(int(round(p.x * scale)), int(round(p.y * scale))) for p in pts]
    for i in range(len(pts) - 1):
        if pts[i].pen_lift:
            continue
        for x, y in _bresenham(*cells[i], *cells[i + 1]):
            grid[y, x] = 1
    return grid


def _bresenham(x0: int, y0: int, x1: int, y1: int):
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield x0, y0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def grid_features(grid: np.ndarray, pool_size: int, *, with_flag: bool = False):
    """Average-pool the grid into non-overlapping blocks, flatten row-major,
    l2-normalize.  An empty grid hits the degenerate-normalization fallback;
    pass with_flag=True to observe it."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise InputError(f"grid must be square, got shape {grid.shape}")
    g = grid.shape[0]
    if pool_size < 1 or g % pool_size:
        raise InputError(f"grid size {g} is not divisible by pool_size {pool_size}")
    nb = g // pool_size
    blocks = grid.reshape(nb, pool_size, nb, pool_size).mean(axis=(1, 3))
    return l2_normalize(blocks.reshape(-1), with_flag=with_flag)


def shuffle_strokes(sketch: StrokeSketch, rng: np.random.Generator) -> StrokeSketch:
    """Permute whole strokes uniformly; the drawn segment set is unchanged,
    so a full render (k = N) is identical before and after."""
    runs = sketch.strokes()
    if len(runs) < 2:
        log.info("sketch has a single stroke; shuffle is a no-op")
        return sketch
    order = rng.permutation(len(runs))
    points = []
    for i in order:
        points.extend(runs[i])
    return StrokeSketch(tuple(points))


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    return l2_normalize(rng.standard_normal(dim))


def _latent_episode(cfg: SimConfig, rng: np.random.Generator, photos: np.ndarray, episode_id: str, photo_ids) -> SketchEpisode:
    m = photos.shape[0]
    paired = int(rng.integers(m))
    target = photos[paired]
    t_total = cfg.steps
    states = np.empty((t_total, photos.shape[1]))
    for t in range(1, t_total + 1):
        alpha = t / t_total
        noise = cfg.noise_scale * _unit(rng, photos.shape[1])
        states[t - 1] = l2_normalize(alpha * target + (1.0 - alpha) * noise)
    if t_total >= 2 and rng.random() < cfg.outlier_prob:
        low = math.ceil(t_total / 2)           # 1-based window [ceil(T/2), T-1]
        t_star = int(rng.integers(low, t_total))
        distractor = int(rng.integers(m - 1))
        if distractor >= paired:
            distractor += 1
        w = cfg.outlier_magnitude
        states[t_star - 1] = l2_normalize((1.0 - w) * states[t_star - 1] + w * photos[distractor])
    return SketchEpisode(episode_id, photo_ids[paired], states)


def _random_sketch(cfg: SimConfig, rng: np.random.Generator) -> StrokeSketch:
    per_stroke = max(2, cfg.points_per_sketch // cfg.strokes_per_sketch)
    points = []
    for _ in range(cfg.strokes_per_sketch):
        pos = rng.uniform(0.0, 1.0, size=2)
        for j in range(per_stroke):
            points.append(StrokePoint(float(pos[0]), float(pos[1]), pen_lift=(j == per_stroke - 1)))
            pos = np.clip(pos + rng.uniform(-0.25, 0.25, size=2), 0.0, 1.0)
    return StrokeSketch(tuple(points))


def _jitter_sketch(sketch: StrokeSketch, sd: float, rng: np.random.Generator) -> StrokeSketch:
    points = []
    for pt in sketch.points:
        dx, dy = rng.normal(0.0, sd, size=2)
        points.append(
            StrokePoint(
                float(np.clip(pt.x + dx, 0.0, 1.0)),
                float(np.clip(pt.y + dy, 0.0, 1.0)),
                pt.pen_lift,
            )
        )
    return StrokeSketch(tuple(points))


def _geometric_episode(cfg: SimConfig, rng: np.random.Generator, photo_sketches, episode_id: str, photo_ids) -> SketchEpisode:
    m = len(photo_sketches)
    paired = int(rng.integers(m))
    redraw = _jitter_sketch(photo_sketches[paired], cfg.noise_scale, rng)
    n = len(redraw)
    stride = n // cfg.steps
    states = []
    for t in range(1, cfg.steps + 1):
        k = n if t == cfg.steps else stride * t   # final step always completes
        states.append(grid_features(rasterize(redraw, k, cfg.grid_size), cfg.pool_size))
    return SketchEpisode(episode_id, photo_ids[paired], np.stack(states), strokes=redraw)


def gen_synthetic_dataset(config: SimConfig) -> SynthDataset:
    """Generate the photo gallery plus train/test episode splits.

    Photos come from the master seed; episode i (train first, then test,
    numbered globally) uses its own FNV-derived generator.
    """
    master = np.random.default_rng(config.seed)
    photo_ids = [f"photo_{j:04d}" for j in range(config.gallery_size)]
    if config.mode == "latent":
        photo_features = normalize_rows(
            master.standard_normal((config.gallery_size, config.feature_dim))
        )
        photo_sketches = None
    else:
        photo_sketches = [_random_sketch(config, master) for _ in range(config.gallery_size)]
        photo_features = np.stack(
            [
                grid_features(rasterize(s, len(s), config.grid_size), config.pool_size)
                for s in photo_sketches
            ]
        )
    ds = SynthDataset(
        photo_ids=photo_ids,
        photo_features=photo_features,
        feature_dim=photo_features.shape[1],
        steps=config.steps,
    )
    counts = (("train", config.train_episodes), ("test", config.test_episodes))
    global_index = 0
    for split_name, count in counts:
        split = ds.train if split_name == "train" else ds.test
        for i in range(count):
            rng = np.random.default_rng(episode_seed(config.seed, global_index))
            episode_id = f"{split_name}_{i:04d}"
            if config.mode == "latent":
                ep = _latent_episode(config, rng, photo_features, episode_id, photo_ids)
            else:
                ep = _geometric_episode(config, rng, photo_sketches, episode_id, photo_ids)
            split.append(ep)
            global_index += 1
    return ds
