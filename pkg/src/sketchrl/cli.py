"""Command-line interface.

Commands: gen-synth, pretrain, train-rl, eval, replay.  Exit codes: 0 on
success, 1 for usage errors, 2 for data/format problems (bad files, bad
config values), 3 for numeric failures.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .dataio import (
    RunSettings,
    config_from_dict,
    format_float,
    load_config,
    load_dataset,
    load_model,
    override_seed,
    save_dataset,
    save_model,
    write_csv,
)
from .embedding import LinearHead
from .errors import DataFormatError, InputError, NumericError
from .evaluate import evaluate_model, query_rows
from .policy import GaussianPolicy
from .pretrain import build_gallery, pretrain
from .ranking import batch_rank_lists, batch_rank_of, kendall_tau_normalized
from .simulate import gen_synthetic_dataset
from .trainer import HISTORY_COLUMNS, train

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

SUMMARY_COLUMNS = ("scheme", "mean_reward", "mA", "mB", "acc1", "acc5", "acc10", "sbi")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad arguments; this interface promises 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_settings(args) -> RunSettings:
    if getattr(args, "config", None):
        settings = load_config(args.config)
    else:
        settings = config_from_dict({})
    if getattr(args, "seed", None) is not None:
        settings = override_seed(settings, args.seed)
    return settings


def _with_suffix(path: str, suffix: str) -> str:
    stem, _ = os.path.splitext(path)
    return stem + suffix


def _cmd_gen_synth(args) -> int:
    settings = _load_settings(args)
    ds = gen_synthetic_dataset(settings.sim)
    save_dataset(args.out, ds)
    print(
        f"wrote {args.out}: {len(ds.photo_ids)} photos, "
        f"{len(ds.train)} train / {len(ds.test)} test episodes, T={ds.steps}"
    )
    return EXIT_OK


def _cmd_pretrain(args) -> int:
    settings = _load_settings(args)
    ds = load_dataset(args.data)
    head = pretrain(settings.pretrain, ds.train, ds.photo_ids, ds.photo_features)
    meta = {
        "stage": "pretrain",
        "epochs": settings.pretrain.epochs,
        "seed": settings.pretrain.seed,
        "use_partial_anchors": settings.pretrain.use_partial_anchors,
    }
    save_model(args.out, head, meta)
    gallery = build_gallery(head, ds.photo_features, ds.photo_ids)
    result = evaluate_model(head, ds.train, gallery, metric=settings.eval.metric)
    print(f"wrote {args.out}")
    print(
        f"train split: mA={result.m_a:.2f} mB={result.m_b:.4f} "
        f"acc@1={result.acc1:.4f} acc@5={result.acc5:.4f} acc@10={result.acc10:.4f}"
    )
    return EXIT_OK


def _cmd_train_rl(args) -> int:
    settings = _load_settings(args)
    ds = load_dataset(args.data)
    head, _ = load_model(args.head)
    if not isinstance(head, LinearHead):
        raise DataFormatError(f"{args.head}: train-rl needs a head model, got a policy")
    gallery = build_gallery(head, ds.photo_features, ds.photo_ids)
    policy, history = train(
        settings.train,
        head,
        ds.train,
        gallery,
        settings.reward,
        eval_episodes=ds.train,
        eval_metric=settings.eval.metric,
    )
    meta = {
        "stage": "train-rl",
        "objective": settings.train.objective,
        "epochs": settings.train.epochs,
        "seed": settings.train.seed,
        "reward_scheme": settings.reward.scheme,
        "gamma1": settings.reward.gamma1,
        "gamma2": settings.reward.gamma2,
        "gallery_head": {"weight": head.weight, "bias": head.bias},
    }
    save_model(args.out, policy, meta)
    history_path = args.history or _with_suffix(args.out, "_history.csv")
    write_csv(history_path, HISTORY_COLUMNS, [[row[c] for c in HISTORY_COLUMNS] for row in history])
    from .report import render_history_figure

    render_history_figure(history, _with_suffix(history_path, ".png"))
    last = history[-1]
    print(f"wrote {args.out} and {history_path}")
    print(
        f"epoch {last['epoch']}: mA={last['mA']:.2f} mB={last['mB']:.4f} "
        f"acc@1={last['acc1']:.4f} sbi={last['sbi']:.4f}"
    )
    return EXIT_OK


def _resolve_eval_model(path):
    """A policy file carries the frozen pretrain head for the gallery side;
    a bare head serves both sides itself."""
    model, meta = load_model(path)
    if isinstance(model, GaussianPolicy):
        stored = meta.get("gallery_head")
        if stored is not None:
            if not isinstance(stored, dict) or "weight" not in stored or "bias" not in stored:
                raise DataFormatError(f"{path}: training_meta.gallery_head needs weight and bias")
            gallery_head = LinearHead(stored["weight"], stored["bias"])
        else:
            log.info("policy file has no stored gallery head; embedding photos with the policy head")
            gallery_head = model.to_head()
        return model, gallery_head
    return model, model


def _split_episodes(ds, split: str):
    episodes = ds.train if split == "train" else ds.test
    if not episodes:
        raise DataFormatError(f"dataset has no {split} episodes")
    return episodes


def _cmd_eval(args) -> int:
    settings = _load_settings(args)
    ds = load_dataset(args.data)
    model, gallery_head = _resolve_eval_model(args.model)
    gallery = build_gallery(gallery_head, ds.photo_features, ds.photo_ids)
    episodes = _split_episodes(ds, settings.eval.split)
    result = evaluate_model(
        model, episodes, gallery, metric=settings.eval.metric, reward_config=settings.reward
    )
    scheme = settings.reward.scheme
    if scheme == "threshold":
        scheme = f"threshold_{settings.reward.threshold_q}"
    write_csv(
        args.out,
        SUMMARY_COLUMNS,
        [[scheme, result.mean_reward, result.m_a, result.m_b,
          result.acc1, result.acc5, result.acc10, result.sbi]],
    )
    t_total = result.percentile_curve.size
    curve_rows = [
        [(t + 1) / t_total, result.percentile_curve[t], result.inverse_rank_curve[t]]
        for t in range(t_total)
    ]
    curve_path = _with_suffix(args.out, "_curve.csv")
    write_csv(curve_path, ("step_fraction", "mean_percentile", "mean_inverse_rank"), curve_rows)
    from .report import render_eval_figure

    render_eval_figure(result.percentile_curve, result.inverse_rank_curve, _with_suffix(args.out, ".png"))
    print(f"wrote {args.out} and {curve_path}")
    print(
        f"{settings.eval.split} split ({scheme}): mA={result.m_a:.2f} mB={result.m_b:.4f} "
        f"acc@1={result.acc1:.4f} sbi={result.sbi:.4f}"
    )
    return EXIT_OK


def _cmd_replay(args) -> int:
    ds = load_dataset(args.data)
    model, gallery_head = _resolve_eval_model(args.model)
    gallery = build_gallery(gallery_head, ds.photo_features, ds.photo_ids)
    episode = None
    for ep in list(ds.train) + list(ds.test):
        if ep.episode_id == args.episode_id:
            episode = ep
            break
    if episode is None:
        raise DataFormatError(f"episode {args.episode_id!r} not found in {args.data}")
    queries = query_rows(model, episode.states)
    ranks = batch_rank_of(queries, gallery, episode.paired_photo_id)
    lists = batch_rank_lists(queries, gallery)
    m = gallery.size
    print("step,rank,percentile,tau")
    for t in range(len(ranks)):
        pct = 100.0 * (m - ranks[t]) / (m - 1)
        tau = "" if t == 0 else format_float(kendall_tau_normalized(lists[t - 1], lists[t]))
        print(f"{t + 1},{ranks[t]},{format_float(pct)},{tau}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sketchrl", description="On-the-fly sketch-to-photo retrieval trainer")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--seed", type=int, help="override every stage seed")
    p.add_argument("--out", required=True, help="dataset file to write")
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("pretrain", help="triplet-train the embedding head")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--seed", type=int, help="override every stage seed")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="head model file to write")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("train-rl", help="fine-tune a policy against rank rewards")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--seed", type=int, help="override every stage seed")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--head", required=True, help="pretrained head model file")
    p.add_argument("--out", required=True, help="policy model file to write")
    p.add_argument("--history", help="history CSV path (default: <out>_history.csv)")
    p.set_defaults(func=_cmd_train_rl)

    p = sub.add_parser("eval", help="evaluate a model on a dataset split")
    p.add_argument("--config", help="run config JSON (reward scheme, split, metric)")
    p.add_argument("--model", required=True, help="head or policy model file")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="summary CSV path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("replay", help="print one episode's per-step retrieval trace")
    p.add_argument("--model", required=True, help="head or policy model file")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--episode-id", required=True, help="episode to replay")
    p.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (DataFormatError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
