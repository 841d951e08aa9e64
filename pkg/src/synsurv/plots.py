"""Figure rendering for experiment reports.

Renders the corpus-mean alarm curve per grid cell and a summary bar chart of
mean FAR-averaged delays, written as PNG files next to the CSV output.
Matplotlib is imported lazily with the Agg backend so headless runs and
plot-free runs stay cheap.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def step_delay(curve: Sequence[tuple[float, float]], grid: np.ndarray) -> np.ndarray:
    """Evaluate a (far, delay) step curve on a FAR grid (right-continuous)."""
    fars = np.array([f for f, _ in curve])
    delays = np.array([d for _, d in curve])
    idx = np.searchsorted(fars, grid, side="right") - 1
    idx = np.clip(idx, 0, len(fars) - 1)
    return delays[idx]


def save_amoc_figure(
    curves: Sequence[Sequence[tuple[float, float]]],
    title: str,
    path: str | Path,
    far_cap: float = 0.05,
) -> None:
    """Corpus-mean alarm curve: mean delay vs false alarm rate."""
    plt = _plt()
    grid = np.linspace(0.0, 1.0, 401)
    stacked = np.vstack([step_delay(c, grid) for c in curves if c])
    mean_delay = stacked.mean(axis=0)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(grid, mean_delay, where="post", lw=1.5)
    ax.axvline(far_cap, color="crimson", ls="--", lw=1, label=f"FAR cap {far_cap:g}")
    ax.set_xlabel("false alarm rate")
    ax.set_ylabel("mean detection delay (slots)")
    ax.set_title(title)
    ax.set_xlim(0, 1)
    ax.set_ylim(bottom=0)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_summary_figure(
    rows: Sequence[tuple[str, float]],
    path: str | Path,
    far_cap: float = 0.05,
) -> None:
    """Horizontal bar chart of mean FAR-averaged delay per grid cell (lower is better)."""
    plt = _plt()
    labels = [name for name, _ in rows]
    values = [v for _, v in rows]
    fig, ax = plt.subplots(figsize=(7, 0.45 * len(rows) + 1.5))
    y = np.arange(len(rows))
    ax.barh(y, values, color="steelblue")
    ax.set_yticks(y, labels)
    ax.invert_yaxis()
    ax.set_xlabel(f"mean delay averaged over FAR <= {far_cap:g} (slots, lower is better)")
    for yi, v in zip(y, values):
        ax.text(v, yi, f" {v:.3f}", va="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
