"""Figures for sweep and merge results."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .merge import MergeResult  # noqa: E402
from .sweep import SweepResult  # noqa: E402


def plot_sweep(result: SweepResult, path) -> None:
    """AUC heatmap over (trees, depth) with the m * 2^d = s boundary."""
    grid = np.array([[result.auc[(d, m)] for m in result.trees] for d in result.depths])
    fig, ax = plt.subplots(figsize=(6, 4.5))
    im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(result.trees)), [str(m) for m in result.trees])
    ax.set_yticks(range(len(result.depths)), [str(d) for d in result.depths])
    ax.set_xlabel("trees m")
    ax.set_ylabel("max depth d")
    for i in range(len(result.depths)):
        for j in range(len(result.trees)):
            ax.text(j, i, f"{grid[i, j]:.3f}", ha="center", va="center", fontsize=7, color="w")
    if result.budget is not None:
        # boundary in index coordinates, interpolated on a log scale of m
        xs = np.linspace(0, len(result.trees) - 1, 200)
        ms = np.exp(np.interp(xs, range(len(result.trees)), np.log(result.trees)))
        ds = np.log2(result.budget / ms)
        ys = np.interp(ds, result.depths, range(len(result.depths)), left=np.nan, right=np.nan)
        ax.plot(xs, ys, color="0.85", lw=2, label=f"m·2^d = {result.budget}")
        ax.legend(loc="upper right", fontsize=8)
    fig.colorbar(im, ax=ax, label="mean AUC")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_merge(results: list[MergeResult], path) -> None:
    """Mean AUC with confidence bars per setting against the number of providers."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ts = [r.t for r in results]
    for name, marker in (("silo", "o"), ("merged", "s"), ("pooled", "^")):
        s = [r.summary()[name] for r in results]
        mean = np.array([v[0] for v in s])
        err = np.array([[v[0] - v[1] for v in s], [v[2] - v[0] for v in s]])
        ax.errorbar(ts, mean, yerr=err, marker=marker, capsize=3, label=name)
    ax.set_xlabel("providers t")
    ax.set_ylabel("AUC")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
