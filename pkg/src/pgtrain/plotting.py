"""Figures rendered next to the CSV reports."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 10,
    "svg.hashsalt": "pgtrain",
}


def figure_path(csv_path: Path) -> Path:
    return Path(csv_path).with_suffix(".png")


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_traces(traces: Dict[str, "object"], path: Path, title: str = "") -> Path:
    """Test (solid) and train (dashed) loss per epoch for each named trace."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, (name, tr) in enumerate(traces.items()):
            color = f"C{i}"
            ax.plot(tr.epochs, tr.test_loss, color=color, label=f"{name} test")
            ax.plot(tr.epochs, tr.train_loss, color=color, ls="--", alpha=0.6,
                    label=f"{name} train")
        ax.set_xlabel("epoch")
        ax.set_ylabel("MSE loss")
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_compare(epochs: np.ndarray, losses: Dict[str, np.ndarray],
                 deltas: Dict[str, np.ndarray], path: Path) -> Path:
    """Aligned losses (top) and their per-epoch differences to the first run (bottom)."""
    with plt.rc_context(STYLE):
        fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 6.0))
        for name, y in losses.items():
            top.plot(epochs, y, label=name)
        top.set_ylabel("test loss")
        top.legend()
        for name, d in deltas.items():
            bottom.plot(epochs, d, label=name)
        bottom.axhline(0.0, color="k", lw=0.8)
        bottom.set_xlabel("epoch")
        bottom.set_ylabel("loss delta")
        bottom.legend()
        return _save(fig, path)


def plot_capacity(reports: Sequence["object"], path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(reports), squeeze=False,
                                 figsize=(3.4 * len(reports), 3.4))
        for ax, rep in zip(axes[0], reports):
            delays = np.arange(1, rep.t_max + 1)
            ax.bar(delays, rep.cor2, color="C0")
            ax.set_ylim(0, 1.05)
            ax.set_xticks(delays)
            ax.set_xlabel("delay")
            ax.set_ylabel("Cor$^2$")
            ax.set_title(f"{rep.task.value.upper()}  C = {rep.capacity:.2f}")
        return _save(fig, path)
