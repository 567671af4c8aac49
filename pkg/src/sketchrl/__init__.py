"""On-the-fly sketch-to-photo retrieval: a triplet-pretrained linear
embedding head fine-tuned with actor-only clipped-surrogate policy
gradients against non-differentiable rank rewards."""

from .embedding import Gallery, LinearHead, embed, l2_normalize, normalize_rows
from .errors import DataFormatError, InputError, NumericError, SketchRLError
from .evaluate import EvalResult, evaluate_model
from .policy import GaussianPolicy, PolicyGradient
from .pretrain import PretrainConfig, Triplet, build_gallery, pretrain, triplet_grad, triplet_loss
from .ranking import (
    EpisodeRankTrace,
    acc_at_q,
    kendall_tau_normalized,
    mean_episode_curves,
    rank_list,
    rank_of,
    ranking_percentile,
    stroke_backlash_index,
)
from .rewards import RewardConfig, episode_rewards, global_reward, local_reward
from .simulate import (
    SimConfig,
    SketchEpisode,
    StrokePoint,
    StrokeSketch,
    SynthDataset,
    gen_synthetic_dataset,
    grid_features,
    rasterize,
    shuffle_strokes,
)
from .trainer import (
    RolloutBatch,
    TrainConfig,
    collect_rollouts,
    importance_ratio,
    ppo_clip_objective,
    train,
    vanilla_pg_objective,
)

__version__ = "0.1.0"
