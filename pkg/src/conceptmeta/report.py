"""Figure rendering for the CLI report path.

Every figure is derived from (and saved alongside) a delimited text export,
so the plots are a convenience view, never the primary record.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_figure(losses, path, val_points=(), title="training loss"):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(losses, lw=0.7, alpha=0.8, label="episode loss")
    if len(losses) >= 20:
        k = max(len(losses) // 100, 10)
        smooth = np.convolve(losses, np.ones(k) / k, mode="valid")
        ax.plot(np.arange(len(smooth)) + k - 1, smooth, lw=1.8, label=f"{k}-episode mean")
    if val_points:
        steps, vals = zip(*val_points)
        ax2 = ax.twinx()
        ax2.plot(steps, vals, "o-", color="tab:red", ms=3, label="validation")
        ax2.set_ylabel("validation metric")
    ax.set_xlabel("episode")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_curves_figure(grid, preds, truth, path, title="per-concept predictions"):
    """Overlay head predictions (solid) on the latent curves (dashed)."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for t in range(truth.shape[1]):
        ax.plot(grid, truth[:, t], "--", lw=1.2, alpha=0.7, label=f"latent curve {t + 1}")
    for c in range(preds.shape[1]):
        ax.plot(grid, preds[:, c], lw=1.8, label=f"head {c}")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)
    ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def read_curves_csv(path):
    """Parse an export_curves file back into (grid, preds, truth)."""
    with open(path) as fh:
        lines = [l.strip() for l in fh if l.strip() and not l.startswith("#")]
    header = lines[0].split(",")
    n_pred = sum(1 for h in header if h.startswith("pred_"))
    n_true = sum(1 for h in header if h.startswith("true_"))
    data = np.asarray([[float(v) for v in l.split(",")] for l in lines[1:]])
    return data[:, 0], data[:, 1:1 + n_pred], data[:, 1 + n_pred:1 + n_pred + n_true]
