"""Render search curves and evaluation summaries to image files.

Written next to the CSV/JSON outputs so a run's directory is self-contained.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_search_curves(stats, loss_path, metrics_path):
    """Two figures: loss trajectories and validation F1/accuracy per epoch."""
    epochs = [s.epoch for s in stats]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [s.train_loss for s in stats], marker="o", label="train loss")
    ax.plot(epochs, [s.arch_loss for s in stats], marker="s", label="arch loss")
    ax.plot(epochs, [s.val_loss for s in stats], marker="^", label="val loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(loss_path, dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [s.val_f1_weighted for s in stats], marker="o", label="val F1 (weighted)")
    ax.plot(epochs, [s.val_accuracy for s in stats], marker="s", label="val accuracy")
    ax.set_xlabel("epoch")
    ax.set_ylabel("score")
    ax.set_ylim(0.0, 1.02)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(metrics_path, dpi=120)
    plt.close(fig)


def render_class_f1(report_dict: dict, path):
    """Horizontal bar chart of per-class F1 from a report dict."""
    per_class = report_dict["per_class"]
    names = sorted(per_class)
    scores = [per_class[n]["f1"] for n in names]
    fig, ax = plt.subplots(figsize=(6, 0.5 * len(names) + 1.5))
    ax.barh(names, scores)
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("F1")
    ax.grid(True, axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
