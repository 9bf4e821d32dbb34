"""Report figures (PNG) rendered with matplotlib's Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def sweep_figure(path, param_name: str, points: Sequence, series: Dict[str, Dict[str, List[float]]],
                 title: str = "") -> Path:
    """RMSE and SSIM versus the grid parameter, one line per model.

    ``series[model]`` maps ``"rmse"``/``"ssim"`` (and optional ``"rmse_err"``,
    ``"ssim_err"``) to one value per grid point; NaN entries are skipped.
    """
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    numeric = all(isinstance(p, (int, float)) for p in points)
    xs = np.asarray(points, dtype=float) if numeric else np.arange(len(points))
    for ax, metric in zip(axes, ("rmse", "ssim")):
        for model, vals in series.items():
            y = np.asarray(vals.get(metric, [np.nan] * len(xs)), dtype=float)
            err = vals.get(f"{metric}_err")
            if np.all(np.isnan(y)):
                continue
            ax.errorbar(xs, y, yerr=None if err is None else np.asarray(err, float),
                        marker="o", capsize=3, label=model)
        ax.set_xlabel(param_name)
        ax.set_ylabel(metric.upper())
        if not numeric:
            ax.set_xticks(xs)
            ax.set_xticklabels([str(p) for p in points])
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def gallery_figure(path, truth: np.ndarray, recons: Dict[str, np.ndarray],
                   n: int = 4, title: str = "") -> Path:
    """Ground truth in the first row, one row per model below it."""
    plt = _pyplot()
    n = min(n, len(truth))
    rows = 1 + len(recons)
    fig, axes = plt.subplots(rows, n, figsize=(1.6 * n + 1.2, 1.6 * rows), squeeze=False)
    labels = ["truth"] + list(recons)
    stacks = [truth] + list(recons.values())
    for r, (label, stack) in enumerate(zip(labels, stacks)):
        for c in range(n):
            ax = axes[r][c]
            ax.imshow(np.clip(stack[c], 0, 1), cmap="gray", vmin=0, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
            if c == 0:
                ax.set_ylabel(label, fontsize=8)
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def history_figure(path, history: List[dict], title: Optional[str] = None) -> Path:
    """Training and validation loss per epoch, steps drawn side by side."""
    plt = _pyplot()
    steps = sorted({r["step"] for r in history})
    fig, axes = plt.subplots(1, len(steps), figsize=(4.2 * len(steps), 3.2), squeeze=False)
    for ax, step in zip(axes[0], steps):
        recs = [r for r in history if r["step"] == step]
        ep = [r["epoch"] for r in recs]
        ax.plot(ep, [r["train_loss"] for r in recs], label="train")
        ax.plot(ep, [r["val_loss"] for r in recs], label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title(f"step {step}", fontsize=9)
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
