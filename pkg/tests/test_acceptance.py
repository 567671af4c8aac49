"""End-to-end acceptance checks for the retrieval policy package.

Each test prints exactly one PASS/FAIL line (run with ``pytest -s`` to see
them as they happen; plain ``pytest`` shows the lines of failing checks in
the captured-output section).  Budgeted checks also assert their wall-clock
limit.  Everything is seeded, so outcomes are reproducible bit for bit.
"""

import json
import time

import numpy as np

from sketchrl import cli
from sketchrl.cli import EXIT_OK
from sketchrl.dataio import load_model, read_csv
from sketchrl.embedding import Gallery, LinearHead, embed, normalize_rows
from sketchrl.evaluate import evaluate_model
from sketchrl.policy import GaussianPolicy, PolicyGradient
from sketchrl.pretrain import PretrainConfig, Triplet, build_gallery, pretrain, triplet_grad, triplet_loss
from sketchrl.ranking import kendall_tau_normalized, rank_list, rank_of
from sketchrl.rewards import RewardConfig, episode_rewards
from sketchrl.simulate import SimConfig, gen_synthetic_dataset, grid_features, rasterize, shuffle_strokes
from sketchrl.trainer import (
    RolloutBatch,
    TrainConfig,
    importance_ratio,
    ppo_clip_objective,
    train,
    vanilla_pg_objective,
)


def _verdict(n, label, ok, detail=""):
    tail = f" ({detail})" if detail else ""
    print(f"\n[{n}/9] {label}: {'PASS' if ok else 'FAIL'}{tail}")
    return f"{label}{tail}"


# ---------------------------------------------------------------- helpers

def _flat(policy):
    return np.concatenate([policy.weight.ravel(), policy.bias, policy.sigma])


def _policy_from_flat(policy, flat):
    d_out, d_in = policy.weight.shape
    w = flat[: d_out * d_in].reshape(d_out, d_in)
    b = flat[d_out * d_in: d_out * d_in + d_out]
    s = flat[d_out * d_in + d_out:]
    return GaussianPolicy(w, b, s)


def _grad_flat(g: PolicyGradient):
    return np.concatenate([g.d_weight.ravel(), g.d_bias, g.d_sigma])


def _fd(fn, policy, step=1e-5):
    flat = _flat(policy)
    out = np.empty_like(flat)
    for i in range(flat.size):
        hi, lo = flat.copy(), flat.copy()
        hi[i] += step
        lo[i] -= step
        out[i] = (fn(_policy_from_flat(policy, hi)) - fn(_policy_from_flat(policy, lo))) / (2 * step)
    return out


def _rel_err(analytic, numeric):
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-10))


def _random_policy(rng, out_dim, in_dim):
    return GaussianPolicy(
        rng.standard_normal((out_dim, in_dim)),
        rng.standard_normal(out_dim),
        rng.uniform(0.5, 2.0, out_dim),
    )


def _random_batch(rng, policy, episodes=2, steps=3, ratio_jitter=0.3):
    n = episodes * steps
    states = rng.standard_normal((n, policy.in_dim))
    actions = np.stack([policy.mean(s) + rng.standard_normal(policy.out_dim) * policy.sigma
                        for s in states])
    logp = policy.log_prob_batch(states, actions)
    old = logp - rng.uniform(-ratio_jitter, ratio_jitter, n)
    rewards = rng.uniform(0.05, 1.0, n)
    return RolloutBatch(states, actions, old, rewards, [steps] * episodes)


# ------------------------------------------------------------- the checks

def test_gradient_oracles():
    rng = np.random.default_rng(42)
    start = time.perf_counter()
    worst = {"log_prob": 0.0, "vanilla_pg": 0.0, "ppo_clip": 0.0, "triplet": 0.0}

    for _ in range(100):
        p = _random_policy(rng, 4, 6)
        s = rng.standard_normal(6)
        a = p.mean(s) + rng.standard_normal(4) * p.sigma
        err = _rel_err(_grad_flat(p.log_prob_grad(s, a)), _fd(lambda q: q.log_prob(s, a), p))
        worst["log_prob"] = max(worst["log_prob"], err)

    for _ in range(100):
        p = _random_policy(rng, 3, 4)
        batch = _random_batch(rng, p)
        err = _rel_err(_grad_flat(vanilla_pg_objective(batch, p)[1]),
                       _fd(lambda q: vanilla_pg_objective(batch, q)[0], p))
        worst["vanilla_pg"] = max(worst["vanilla_pg"], err)

    for _ in range(100):
        p = _random_policy(rng, 3, 4)
        batch = _random_batch(rng, p)
        err = _rel_err(_grad_flat(ppo_clip_objective(batch, p, 0.2)[1]),
                       _fd(lambda q: ppo_clip_objective(batch, q, 0.2)[0], p))
        worst["ppo_clip"] = max(worst["ppo_clip"], err)

    counted = 0
    while counted < 100:
        w = rng.standard_normal((3, 4))
        b = rng.standard_normal(3)
        head = LinearHead(w, b)
        t = Triplet(rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(4))
        if triplet_loss(head, t, 0.3) < 1e-3:
            continue  # hinge off or too close to the kink for a clean stencil
        counted += 1
        d_w, d_b = triplet_grad(head, t, 0.3)
        analytic = np.concatenate([d_w.ravel(), d_b])

        def loss_of(flat):
            h = LinearHead(flat[:12].reshape(3, 4), flat[12:])
            return triplet_loss(h, t, 0.3)

        flat0 = np.concatenate([w.ravel(), b])
        numeric = np.empty_like(flat0)
        for i in range(flat0.size):
            hi, lo = flat0.copy(), flat0.copy()
            hi[i] += 1e-5
            lo[i] -= 1e-5
            numeric[i] = (loss_of(hi) - loss_of(lo)) / 2e-5
        worst["triplet"] = max(worst["triplet"], _rel_err(analytic, numeric))

    elapsed = time.perf_counter() - start
    ok = all(v <= 1e-4 for v in worst.values()) and elapsed < 30.0
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items()) + f", {elapsed:.1f}s"
    msg = _verdict(1, "gradient oracles, 100 instances each", ok, detail)
    assert ok, msg


def test_kendall_tau_against_quadratic_oracle():
    rng = np.random.default_rng(7)
    start = time.perf_counter()

    def naive(l1, l2):
        pos1 = {v: i for i, v in enumerate(l1)}
        pos2 = {v: i for i, v in enumerate(l2)}
        items = list(l1)
        m = len(items)
        disc = 0
        for i in range(m):
            for j in range(i + 1, m):
                a, b = items[i], items[j]
                if (pos1[a] - pos1[b]) * (pos2[a] - pos2[b]) < 0:
                    disc += 1
        return disc / (m * (m - 1) / 2)

    mismatches = 0
    for _ in range(1000):
        m = int(rng.integers(2, 51))
        items = rng.choice(100_000, size=m, replace=False)
        l1 = rng.permutation(items)
        l2 = rng.permutation(items)
        if kendall_tau_normalized(l1, l2) != naive(l1, l2):
            mismatches += 1

    ident = kendall_tau_normalized(np.arange(30), np.arange(30))
    rev = kendall_tau_normalized(np.arange(30), np.arange(30)[::-1])
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and ident == 0.0 and rev == 1.0 and elapsed < 10.0
    msg = _verdict(2, "Kendall-Tau vs O(M^2) enumeration, 1000 pairs", ok,
                   f"mismatches {mismatches}, identity {ident}, reversal {rev}, {elapsed:.1f}s")
    assert ok, msg


def test_rank_functions_against_sort_oracle():
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    mismatches = 0
    for trial in range(500):
        m = int(rng.integers(2, 501))
        d = int(rng.integers(3, 9))
        rows = normalize_rows(rng.standard_normal((m, d)))
        if trial % 3 == 0:  # force equidistant rows so the tie rule is exercised
            dup = int(rng.integers(m))
            rows = rows.copy()
            rows[(dup + m // 2) % m] = rows[dup]
        gallery = Gallery(tuple(f"p{i}" for i in range(m)), rows)
        query = rng.standard_normal(d)
        if trial % 3 == 0:
            query = rows[int(rng.integers(m))].copy()  # lands exactly on a gallery row

        dist = np.array([float(np.sqrt(((rows[i] - query) ** 2).sum())) for i in range(m)])
        order = sorted(range(m), key=lambda i: (dist[i], i))
        if not np.array_equal(rank_list(query, gallery), np.array(order)):
            mismatches += 1
        target = int(rng.integers(m))
        if rank_of(query, gallery, f"p{target}") != 1 + order.index(target):
            mismatches += 1

    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 30.0
    msg = _verdict(3, "rank_list/rank_of vs naive sort, 500 galleries", ok,
                   f"mismatches {mismatches}, {elapsed:.1f}s")
    assert ok, msg


def test_ppo_surrogate_identities():
    rng = np.random.default_rng(23)
    worst_ratio = 0.0
    worst_obj = 0.0
    clip_violations = 0

    for _ in range(100):
        p = _random_policy(rng, 3, 5)
        batch = _random_batch(rng, p, episodes=3, steps=4, ratio_jitter=0.0)

        # with old_log_probs taken from the current parameters every ratio is 1
        ratios = np.array([
            importance_ratio(p, batch.states[i], batch.actions[i], batch.old_log_probs[i])
            for i in range(batch.size)
        ])
        worst_ratio = max(worst_ratio, float(np.abs(ratios - 1.0).max()))
        obj, _ = ppo_clip_objective(batch, p, 0.2)
        worst_obj = max(worst_obj, abs(obj - batch.rewards.mean()))

        # a perturbed collection policy with nonnegative rewards: clipping can
        # only lower the surrogate
        shifted = _random_batch(rng, p, episodes=3, steps=4, ratio_jitter=0.4)
        logp = p.log_prob_batch(shifted.states, shifted.actions)
        unclipped = float(np.mean(
            np.exp(np.clip(logp - shifted.old_log_probs, -30.0, 30.0)) * shifted.rewards))
        clipped, _ = ppo_clip_objective(shifted, p, 0.2)
        if clipped > unclipped + 1e-12:
            clip_violations += 1

    ok = worst_ratio <= 1e-12 and worst_obj <= 1e-12 and clip_violations == 0
    msg = _verdict(4, "PPO ratio/objective identities, 100 batches", ok,
                   f"max|ratio-1| {worst_ratio:.1e}, max|obj-meanR| {worst_obj:.1e}, "
                   f"clip violations {clip_violations}")
    assert ok, msg


def test_policy_training_improves_early_retrieval():
    start = time.perf_counter()
    sim = SimConfig(mode="latent", gallery_size=100, train_episodes=200, test_episodes=50,
                    steps=20, feature_dim=32, noise_scale=0.5, outlier_prob=0.0, seed=7)
    ds = gen_synthetic_dataset(sim)
    reward = RewardConfig(scheme="inverse_sqrt_rank", gamma1=1.0, gamma2=0.0)

    rels = []
    for s in (0, 1, 2):
        head = pretrain(PretrainConfig(embedding_dim=16, seed=s),
                        ds.train, ds.photo_ids, ds.photo_features)
        gallery = build_gallery(head, ds.photo_features, ds.photo_ids)
        base = evaluate_model(head, ds.test, gallery)
        cfg = TrainConfig(epochs=300, lr_init=1e-4, lr_drop_epoch=300, sigma_init=0.1, seed=s)
        policy, _ = train(cfg, head, ds.train, gallery, reward)
        tuned = evaluate_model(policy, ds.test, gallery)
        rels.append((tuned.m_b - base.m_b) / base.m_b)

    mean_rel = float(np.mean(rels))
    elapsed = time.perf_counter() - start
    ok = mean_rel >= 0.10 and elapsed < 300.0
    msg = _verdict(5, "policy tuning lifts test m@B by >= 10%", ok,
                   "per-seed " + "/".join(f"{100 * r:+.2f}%" for r in rels)
                   + f", mean {100 * mean_rel:+.2f}%, {elapsed:.0f}s")
    assert ok, msg


def test_global_reward_lowers_backlash():
    start = time.perf_counter()
    sim = SimConfig(mode="latent", gallery_size=100, train_episodes=200, test_episodes=50,
                    steps=20, feature_dim=32, noise_scale=0.5, outlier_prob=0.3,
                    outlier_magnitude=0.8, seed=7)
    ds = gen_synthetic_dataset(sim)

    arms = {0.0: {"sbi": [], "mb": []}, 0.1: {"sbi": [], "mb": []}}
    for s in (0, 1, 2):
        head = pretrain(PretrainConfig(embedding_dim=16, seed=s),
                        ds.train, ds.photo_ids, ds.photo_features)
        gallery = build_gallery(head, ds.photo_features, ds.photo_ids)
        for g2 in arms:
            reward = RewardConfig(scheme="inverse_rank", gamma1=1.0, gamma2=g2)
            policy, _ = train(TrainConfig(epochs=300, seed=s), head, ds.train, gallery, reward)
            res = evaluate_model(policy, ds.test, gallery)
            arms[g2]["sbi"].append(res.sbi)
            arms[g2]["mb"].append(res.m_b)

    sbi0 = float(np.mean(arms[0.0]["sbi"]))
    sbi1 = float(np.mean(arms[0.1]["sbi"]))
    mb0 = float(np.mean(arms[0.0]["mb"]))
    mb1 = float(np.mean(arms[0.1]["mb"]))
    elapsed = time.perf_counter() - start
    ok = sbi1 < sbi0 and mb1 >= 0.95 * mb0 and elapsed < 600.0
    msg = _verdict(6, "consistency term strictly lowers test backlash", ok,
                   f"sbi {sbi0:.4f} -> {sbi1:.4f}, m@B {mb0:.4f} -> {mb1:.4f} "
                   f"({100 * (mb1 - mb0) / mb0:+.2f}%), gamma2 0.1, {elapsed:.0f}s")
    assert ok, msg


def test_full_sketch_rank_unchanged_by_stroke_order():
    sim = SimConfig(mode="geometric", gallery_size=40, train_episodes=60, test_episodes=30,
                    steps=10, feature_dim=16, noise_scale=0.03, seed=11)
    ds = gen_synthetic_dataset(sim)
    head = pretrain(PretrainConfig(embedding_dim=8, epochs=30, seed=0),
                    ds.train, ds.photo_ids, ds.photo_features)
    gallery = build_gallery(head, ds.photo_features, ds.photo_ids)

    rng = np.random.default_rng(99)
    mismatches = 0
    for ep in ds.test:
        before = rank_of(embed(head, ep.states[-1]), gallery, ep.paired_photo_id)
        shuffled = shuffle_strokes(ep.strokes, rng)
        state = grid_features(rasterize(shuffled, len(shuffled), sim.grid_size), sim.pool_size)
        after = rank_of(embed(head, state), gallery, ep.paired_photo_id)
        if before != after:
            mismatches += 1

    ok = mismatches == 0
    msg = _verdict(7, "final-step rank invariant to stroke shuffling", ok,
                   f"{len(ds.test)} episodes, mismatches {mismatches}")
    assert ok, msg


def _pipeline_config(reward=None):
    cfg = {
        "sim": {
            "gallery_size": 12,
            "train_episodes": 8,
            "test_episodes": 4,
            "steps": 5,
            "feature_dim": 8,
            "noise_scale": 0.4,
            "seed": 13,
        },
        "pretrain": {"epochs": 6, "batch_size": 4, "embedding_dim": 6, "seed": 13},
        "train": {"epochs": 2, "episodes_per_batch": 4, "inner_epochs": 2, "seed": 13},
        "reward": {"scheme": "inverse_rank", "gamma1": 1.0, "gamma2": 1e-4},
    }
    if reward:
        cfg["reward"].update(reward)
    return cfg


def test_reward_scheme_harness(tmp_path):
    base = tmp_path / "cfg.json"
    base.write_text(json.dumps(_pipeline_config()))
    data = str(tmp_path / "data.jsonl")
    headf = str(tmp_path / "head.json")
    policyf = str(tmp_path / "policy.json")
    assert cli.main(["gen-synth", "--config", str(base), "--out", data]) == EXIT_OK
    assert cli.main(["pretrain", "--config", str(base), "--data", data, "--out", headf]) == EXIT_OK
    assert cli.main(["train-rl", "--config", str(base), "--data", data,
                     "--head", headf, "--out", policyf]) == EXIT_OK

    runs = [
        ("inverse_rank", {}),
        ("inverse_sqrt_rank", {}),
        ("neg_rank", {}),
        ("threshold", {"threshold_q": 1}),
        ("threshold", {"threshold_q": 5}),
        ("threshold", {"threshold_q": 10}),
    ]
    headers = []
    rows = []
    for i, (scheme, extra) in enumerate(runs):
        cfgf = tmp_path / f"cfg{i}.json"
        cfgf.write_text(json.dumps(_pipeline_config({"scheme": scheme, **extra})))
        out = str(tmp_path / f"eval{i}.csv")
        assert cli.main(["eval", "--config", str(cfgf), "--model", policyf,
                         "--data", data, "--out", out]) == EXIT_OK
        cols, data_rows = read_csv(out)
        headers.append(tuple(cols))
        assert len(data_rows) == 1
        rows.append(data_rows[0])

    comparable = len(set(headers)) == 1 and all(len(r) == len(headers[0]) for r in rows)
    numeric_ok = all(float(cell) == float(cell) for r in rows for cell in r[1:])

    # the inverse-rank scheme must produce per-step rewards inside (0, 1]
    model, _ = load_model(policyf)
    from sketchrl.dataio import load_dataset
    dataset = load_dataset(data)
    head_model, _ = load_model(headf)
    gallery = build_gallery(head_model, dataset.photo_features, dataset.photo_ids)
    res = evaluate_model(model, dataset.test, gallery)
    cfg_local = RewardConfig(scheme="inverse_rank", gamma1=1.0, gamma2=0.0)
    bounds_ok = True
    for trace in res.traces:
        r = episode_rewards(None, trace.ranks, cfg_local)
        if not ((r > 0.0).all() and (r <= 1.0).all()):
            bounds_ok = False

    ok = comparable and numeric_ok and bounds_ok
    msg = _verdict(8, "reward-scheme ablation harness", ok,
                   f"6 runs, shared header {headers[0] == tuple(cli.SUMMARY_COLUMNS)}, "
                   f"inverse_rank rewards in (0,1] {bounds_ok}")
    assert ok, msg


def test_pipeline_byte_determinism(tmp_path):
    def run(tag):
        root = tmp_path / tag
        root.mkdir()
        cfgf = root / "cfg.json"
        cfgf.write_text(json.dumps(_pipeline_config()))
        paths = {
            "dataset": root / "data.jsonl",
            "head": root / "head.json",
            "policy": root / "policy.json",
            "history": root / "policy_history.csv",
            "summary": root / "eval.csv",
            "curve": root / "eval_curve.csv",
        }
        assert cli.main(["gen-synth", "--config", str(cfgf), "--out", str(paths["dataset"])]) == EXIT_OK
        assert cli.main(["pretrain", "--config", str(cfgf), "--data", str(paths["dataset"]),
                         "--out", str(paths["head"])]) == EXIT_OK
        assert cli.main(["train-rl", "--config", str(cfgf), "--data", str(paths["dataset"]),
                         "--head", str(paths["head"]), "--out", str(paths["policy"])]) == EXIT_OK
        assert cli.main(["eval", "--config", str(cfgf), "--model", str(paths["policy"]),
                         "--data", str(paths["dataset"]), "--out", str(paths["summary"])]) == EXIT_OK
        return paths

    a = run("a")
    b = run("b")
    diffs = [name for name in a if a[name].read_bytes() != b[name].read_bytes()]
    ok = not diffs
    msg = _verdict(9, "two pipeline runs byte-identical", ok,
                   "dataset+models+CSVs match" if ok else f"differ: {diffs}")
    assert ok, msg
