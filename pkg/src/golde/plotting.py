"""PNG figures for training runs and evaluation reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_training(log_rows, path, window: int = 50):
    """Loss (raw and moving average) and validation MRR against step."""
    train_rows = [row for row in log_rows if row["split"] == "train"]
    steps = np.array([row["step"] for row in train_rows])
    loss = np.array([row["loss"] for row in train_rows], dtype=float)
    valid = [(row["step"], row["MRR"]) for row in log_rows if row["split"] == "valid"]

    fig, ax = plt.subplots(figsize=(7, 4))
    if len(loss):
        ax.plot(steps, loss, color="0.75", lw=0.8, label="loss")
        if len(loss) >= window:
            ma = np.convolve(loss, np.ones(window) / window, mode="valid")
            ax.plot(steps[window - 1 :], ma, color="C0", lw=1.5, label=f"loss ({window}-step mean)")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if valid:
        ax2 = ax.twinx()
        vs, vm = zip(*valid)
        ax2.plot(vs, vm, "o-", color="C1", label="valid MRR")
        ax2.set_ylabel("valid MRR")
        ax2.set_ylim(0, 1.02)
        ax2.legend(loc="center right")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_per_relation(rows, path, title: str = ""):
    """Horizontal bar chart of MRR per relation from ``per_relation_report`` rows."""
    names = [name for name, _, _ in rows]
    mrr = [rep.mrr for _, rep, _ in rows]
    fig, ax = plt.subplots(figsize=(7, 0.45 * len(rows) + 1.2))
    ax.barh(range(len(rows)), mrr, color="C2")
    ax.set_yticks(range(len(rows)), names)
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel("MRR")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
