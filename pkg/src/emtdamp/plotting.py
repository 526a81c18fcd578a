"""PNG figures written next to the CSV tables."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def training_curves(history: list[dict], metric: str, path, xkey: str = "iteration") -> Path:
    """Test metric and noise variance against iteration (or round)."""
    xs = [r[xkey] for r in history]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    if history and metric in history[0]:
        axes[0].plot(xs, [r[metric] for r in history], marker=".")
    axes[0].set_xlabel(xkey)
    axes[0].set_ylabel(metric)
    axes[0].grid(alpha=0.3)
    axes[1].semilogy(xs, [r["noise_var"] for r in history], marker=".", color="tab:orange")
    axes[1].set_xlabel(xkey)
    axes[1].set_ylabel("noise variance")
    axes[1].grid(alpha=0.3)
    return _save(fig, path)


def sparsity_curve(rows: list[dict], metric: str, path) -> Path:
    """Converged metric against the fraction of neurons kept."""
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    ax.plot([r["sparsity"] for r in rows], [r[metric] for r in rows], marker="o")
    ax.set_xlabel("sparsity (fraction of neurons kept)")
    ax.set_ylabel(metric)
    ax.invert_xaxis()
    ax.grid(alpha=0.3)
    return _save(fig, path)
