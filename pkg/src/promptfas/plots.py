"""Figure rendering for the report paths. Everything draws through the Agg
backend straight to files next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def loss_curves(traces, labels, path) -> Path:
    """One line per fold of total-loss against step."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for trace, label in zip(traces, labels):
        if not trace:
            continue
        total = [row[0] for row in trace]
        ax.plot(np.arange(len(total)), total, label=f"holdout {label}", linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("total loss")
    ax.set_title("training loss per fold")
    if labels:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def score_histograms(fold_scores, path) -> Path:
    """Live vs spoof score histograms per held-out domain."""
    n = max(len(fold_scores), 1)
    cols = min(n, 2)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(5 * cols, 3 * rows), squeeze=False)
    bins = np.linspace(0.0, 1.0, 21)
    for i, (label, live, spoof) in enumerate(fold_scores):
        ax = axes[i // cols][i % cols]
        if len(live):
            ax.hist(live, bins=bins, alpha=0.6, label="live", color="tab:green")
        if len(spoof):
            ax.hist(spoof, bins=bins, alpha=0.6, label="spoof", color="tab:red")
        ax.set_title(f"holdout {label}", fontsize=9)
        ax.set_xlabel("live-class score")
        ax.legend(fontsize=7)
    for j in range(len(fold_scores), rows * cols):
        axes[j // cols][j % cols].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def cell_bars(cells, path) -> Path:
    """Average HTER and AUC per ablation cell."""
    labels = [c.label for c in cells]
    hters = [c.average.hter for c in cells]
    aucs = [c.average.auc for c in cells]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(1.6 * len(labels) + 2, 4))
    ax.bar(x - 0.2, hters, width=0.4, label="HTER", color="tab:red")
    ax.bar(x + 0.2, aucs, width=0.4, label="AUC", color="tab:blue")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_title("fold-average metrics per cell")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def grid_heatmap(cells, query_grid, depth_grid, path) -> Path:
    """HTER heatmap over the (queries x depth) sweep."""
    grid = np.full((len(depth_grid), len(query_grid)), np.nan)
    lut = {(c.extra["queries"], c.extra["depth"]): c.average.hter for c in cells}
    for i, depth in enumerate(depth_grid):
        for j, queries in enumerate(query_grid):
            grid[i, j] = lut.get((queries, depth), np.nan)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    im = ax.imshow(grid, cmap="viridis")
    ax.set_xticks(range(len(query_grid)), [str(q) for q in query_grid])
    ax.set_yticks(range(len(depth_grid)), [str(d) for d in depth_grid])
    ax.set_xlabel("queries")
    ax.set_ylabel("depth")
    ax.set_title("fold-average HTER")
    for i in range(len(depth_grid)):
        for j in range(len(query_grid)):
            ax.text(j, i, f"{grid[i, j]:.3f}", ha="center", va="center",
                    color="white", fontsize=8)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
