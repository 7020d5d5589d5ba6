"""Static figures for the evaluation commands."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend pinned above
import numpy as np  # noqa: E402


def delay_bars(bins: list[dict], path) -> Path:
    """Mean targets found per handling-delay bin, 1 SE whiskers."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    xs = np.arange(len(bins))
    means = [b["mean_targets"] for b in bins]
    errs = [b["se"] for b in bins]
    ax.bar(xs, means, yerr=errs, capsize=4, color="#e8923a", edgecolor="#9c5a17")
    ax.set_xticks(xs)
    ax.set_xticklabels([b["label"] for b in bins])
    ax.set_xlabel("malfunction handling delay")
    ax.set_ylabel("targets found (mean)")
    if bins:
        ax.set_title(f"{bins[0]['n']} runs per bin")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def paired_deltas(rows: list[dict], path) -> Path:
    """Per-seed targets-found deltas (agent minus baseline) and the two
    condition means."""
    deltas = [r["delta_targets"] for r in rows]
    fig, axes = plt.subplots(
        1, 2, figsize=(8.0, 3.6), gridspec_kw={"width_ratios": (3, 1)}
    )
    colors = ["#4a9eda" if d >= 0 else "#d0604c" for d in deltas]
    axes[0].bar(np.arange(len(deltas)), deltas, color=colors)
    axes[0].axhline(0.0, color="black", linewidth=0.8)
    axes[0].set_xlabel("pair")
    axes[0].set_ylabel("targets delta (agent - baseline)")
    mean_base = float(np.mean([r["targets_baseline"] for r in rows])) if rows else 0.0
    mean_agent = float(np.mean([r["targets_agent"] for r in rows])) if rows else 0.0
    axes[1].bar([0, 1], [mean_base, mean_agent], color=["#b5b5b5", "#4a9eda"])
    axes[1].set_xticks([0, 1])
    axes[1].set_xticklabels(["baseline", "agent"])
    axes[1].set_ylabel("targets found (mean)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
