"""Figure rendering for the CLI report paths.

Each CSV the CLI emits gets a companion PNG next to it. The data products
stay plain CSV; these plots are a convenience layer and can be switched off
with --no-figures.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import ActivationStats, AblationResult
from .train import MetricsRow


def save_training_figure(rows: list[MetricsRow], path) -> None:
    steps = [r.step for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot(steps, [r.pia_loss for r in rows], lw=0.8)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("pia_loss")
    axes[1].plot(steps, [r.mi_lower_bound for r in rows], lw=0.8, color="tab:green")
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("MI lower bound (nats)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_projection_figure(coords: np.ndarray, ids: list, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4.5))
    unique = sorted(set(ids))
    cmap = plt.get_cmap("tab10")
    for i, identity in enumerate(unique):
        mask = np.array([v == identity for v in ids])
        ax.scatter(
            coords[mask, 0], coords[mask, 1], s=18,
            color=cmap(i % 10), label=str(identity),
        )
    ax.set_xlabel("pc1")
    ax.set_ylabel("pc2")
    if len(unique) <= 10:
        ax.legend(fontsize=7, title="identity")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_perturbation_figure(results: list[AblationResult], path) -> None:
    ordered = sorted(results, key=lambda r: r.perturb_range)
    ranges = [r.perturb_range for r in ordered]
    fig, ax1 = plt.subplots(figsize=(5, 3.5))
    ax1.plot(ranges, [r.mean_drift for r in ordered], "o-", color="tab:red")
    ax1.set_xlabel("perturbation range (deg)")
    ax1.set_ylabel("mean cosine drift", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(ranges, [r.retrieval_accuracy for r in ordered], "s--", color="tab:blue")
    ax2.set_ylabel("retrieval accuracy", color="tab:blue")
    ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_ablation_figure(results: list[AblationResult], path) -> None:
    ordered = sorted(results, key=lambda r: (r.pooling, r.dict_atoms, r.euler_enabled))
    labels = [
        f"{r.pooling}\nC={r.dict_atoms}\neuler={'on' if r.euler_enabled else 'off'}"
        for r in ordered
    ]
    fig, ax = plt.subplots(figsize=(max(4, 1.1 * len(ordered)), 3.5))
    ax.bar(range(len(ordered)), [r.retrieval_accuracy for r in ordered], color="tab:blue")
    ax.set_xticks(range(len(ordered)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("retrieval accuracy")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_activation_figure(stats: ActivationStats, path, max_atoms: int = 10) -> None:
    buckets = sorted(stats.histograms)
    fig, axes = plt.subplots(1, len(buckets), figsize=(2.4 * len(buckets), 3), sharey=True)
    if len(buckets) == 1:
        axes = [axes]
    for ax, bucket in zip(axes, buckets):
        top = stats.histograms[bucket].most_common(max_atoms)
        ax.bar(range(len(top)), [c for _, c in top], color="tab:purple")
        ax.set_xticks(range(len(top)))
        ax.set_xticklabels([str(a) for a, _ in top], rotation=90, fontsize=6)
        ax.set_title(bucket, fontsize=8)
    axes[0].set_ylabel("activations")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
