"""Figure rendering for the CSV artifacts.

Every function takes already-computed data plus an output path and writes
one PNG. Rendering is headless (Agg); nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .incremental import SweepPoint, TraceRow
from .rnn import TrainHistory


def plot_sweep(curve: list[SweepPoint], path: str | Path, truth_k: int | None = None) -> None:
    """Increment probability against assumed context count, with spread bars."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    k0s = [pt.k0 for pt in curve]
    ax.errorbar(k0s, [pt.mean_prob for pt in curve], yerr=[pt.std_prob for pt in curve],
                marker="o", capsize=3)
    if truth_k is not None:
        ax.axvline(truth_k, color="grey", linestyle="--", linewidth=1, label=f"true k = {truth_k}")
        ax.legend()
    ax.axhline(0.5, color="grey", linewidth=0.5)
    ax.set_xlabel("assumed context count $k_0$")
    ax.set_ylabel("p(increment)")
    ax.set_ylim(-0.05, 1.05)
    ax.set_xticks(k0s)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_trace(trace: list[TraceRow], path: str | Path) -> None:
    """System entropy over the stream with the context count on a twin axis."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    xs = [row.scenes_seen for row in trace]
    ax.plot(xs, [row.entropy for row in trace], marker=".", color="tab:blue")
    ax.set_xlabel("scenes seen")
    ax.set_ylabel("system entropy (nats)", color="tab:blue")
    ax2 = ax.twinx()
    ax2.step(xs, [row.k0 for row in trace], where="post", color="tab:red")
    ax2.set_ylabel("context count $k_0$", color="tab:red")
    ax2.yaxis.get_major_locator().set_params(integer=True)
    for row in trace:
        if row.decision == "increment":
            ax.axvline(row.scenes_seen, color="tab:red", alpha=0.2, linewidth=1)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_history(history: TrainHistory, path: str | Path) -> None:
    """Training loss and split accuracies per epoch."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8, 3.5))
    epochs = [rec.epoch for rec in history.records]
    ax_loss.plot(epochs, [rec.train_loss for rec in history.records])
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_acc.plot(epochs, [rec.train_acc for rec in history.records], label="train")
    ax_acc.plot(epochs, [rec.val_acc for rec in history.records], label="monitored")
    ax_acc.axvline(history.best_epoch, color="grey", linestyle="--", linewidth=1)
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_cooc(n_co: np.ndarray, path: str | Path) -> None:
    """Context-object assignment counts as a heatmap, one row per context."""
    fig, ax = plt.subplots(figsize=(6, 2 + 0.25 * n_co.shape[0]))
    im = ax.imshow(n_co, aspect="auto", interpolation="nearest", cmap="viridis")
    ax.set_xlabel("object id")
    ax.set_ylabel("context")
    ax.set_yticks(range(n_co.shape[0]))
    fig.colorbar(im, ax=ax, label="token count")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
