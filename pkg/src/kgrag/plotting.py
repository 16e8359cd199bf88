"""Matplotlib figures written next to the delimited reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import MetricsReport  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def figure_size(scale: float = 1.0) -> tuple[float, float]:
    width = 5.0 * scale
    return width, width * (np.sqrt(5.0) - 1.0) / 2.0


def plot_metrics_by_type(reports: dict[str, MetricsReport], path: str | Path, metric: str = "accuracy") -> Path:
    """Grouped bars: one group per question type (plus overall), one bar per method."""
    groups = ["all"]
    for rep in reports.values():
        groups += [q for q in rep.per_type if q not in groups]
    width = 0.8 / max(len(reports), 1)
    x = np.arange(len(groups))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figure_size())
        for i, (name, rep) in enumerate(reports.items()):
            vals = []
            for g in groups:
                m = rep.overall if g == "all" else rep.per_type.get(g)
                vals.append(getattr(m, metric) if m is not None else np.nan)
            ax.bar(x + (i - (len(reports) - 1) / 2) * width, vals, width, label=name)
        ax.set_xticks(x)
        ax.set_xticklabels(groups)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel(metric)
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return Path(path)


def plot_loss_curve(mean_losses: Sequence[float], path: str | Path, label: str = "mean margin loss") -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figure_size())
        ax.plot(np.arange(1, len(mean_losses) + 1), mean_losses, lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel(label)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return Path(path)
