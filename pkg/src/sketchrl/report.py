"""Figure rendering for training histories and evaluation curves.

Figures are written next to the corresponding CSV so every delimited
output has a ready-made visual.  Matplotlib is imported lazily with the
Agg backend; nothing here ever opens a window.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_history_figure(history, path) -> None:
    """Two panels over epochs: collected mean reward, and the deterministic
    retrieval summary (mB on the left axis, mA on the right)."""
    plt = _plt()
    epochs = [row["epoch"] for row in history]
    rewards = [np.nan if row["mean_reward"] is None else row["mean_reward"] for row in history]
    fig, (ax_r, ax_m) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_r.plot(epochs, rewards, color="tab:blue")
    ax_r.set_xlabel("epoch")
    ax_r.set_ylabel("mean reward per step")
    ax_r.set_title("collected reward")
    ax_m.plot(epochs, [row["mB"] for row in history], color="tab:orange", label="mB (0..1)")
    ax_m.set_xlabel("epoch")
    ax_m.set_ylabel("mB")
    twin = ax_m.twinx()
    twin.plot(epochs, [row["mA"] for row in history], color="tab:green", label="mA (0..100)")
    twin.set_ylabel("mA")
    ax_m.set_title("retrieval during training")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_eval_figure(percentile_curve, inverse_rank_curve, path) -> None:
    """Per-step mean percentile and mean inverse rank against the fraction
    of the sketch rendered."""
    plt = _plt()
    pct = np.asarray(percentile_curve, dtype=np.float64)
    inv = np.asarray(inverse_rank_curve, dtype=np.float64)
    t_total = pct.size
    x = np.arange(1, t_total + 1) / t_total
    fig, (ax_p, ax_i) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_p.plot(x, pct, marker="o", markersize=3, color="tab:blue")
    ax_p.set_xlabel("fraction of sketch")
    ax_p.set_ylabel("mean ranking percentile")
    ax_p.set_ylim(0, 100)
    ax_i.plot(x, inv, marker="o", markersize=3, color="tab:orange")
    ax_i.set_xlabel("fraction of sketch")
    ax_i.set_ylabel("mean inverse rank")
    ax_i.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
