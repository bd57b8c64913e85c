"""Matplotlib figures for the run report (headless, Agg backend)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}

GOLDEN = (math.sqrt(5) - 1.0) / 2.0


def figsize(width: float = 5.0) -> tuple[float, float]:
    return (width, width * GOLDEN)


def _save(fig, path: str | Path) -> Path:
    # no Software/date metadata, so reruns give byte-identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def plot_sse(series: Sequence[tuple[int, float]], path: str | Path, chosen_k: int | None = None) -> Path:
    """SSE against k, with the selected elbow marked."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        ks = [k for k, _ in series]
        ax.plot(ks, [v for _, v in series], marker="o", color="0.25", lw=1.2)
        if chosen_k is not None and chosen_k in ks:
            v = dict(series)[chosen_k]
            ax.scatter([chosen_k], [v], s=60, color="tab:red", zorder=3, label=f"elbow k={chosen_k}")
            ax.legend(frameon=False)
        ax.set_xlabel("number of clusters k")
        ax.set_ylabel("SSE")
        ax.set_title("Topic clustering: SSE vs k")
        return _save(fig, path)


def plot_curves(curves: Sequence[dict], path: str | Path) -> Path:
    """Per-epoch loss and accuracy for the train and validation splits."""
    with plt.rc_context(STYLE):
        fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(9, 3.2))
        ep = [c["epoch"] for c in curves]
        for key, style in (("train", "-"), ("val", "--")):
            ax_l.plot(ep, [c[f"{key}_loss"] for c in curves], style, label=key)
            ax_a.plot(ep, [c[f"{key}_acc"] for c in curves], style, label=key)
        ax_l.set_xlabel("epoch")
        ax_l.set_ylabel("BCE loss")
        ax_a.set_xlabel("epoch")
        ax_a.set_ylabel("accuracy")
        ax_a.set_ylim(0, 1.02)
        ax_a.legend(frameon=False)
        fig.suptitle("Training and validation curves")
        return _save(fig, path)


def plot_attributes(hist: Sequence[tuple[str, int]], path: str | Path, top: int = 15) -> Path:
    """Horizontal bars of the most common attribute edge labels."""
    rows = list(hist[:top])[::-1]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 0.25 * max(len(rows), 4) + 0.8))
        ax.barh([r[0] for r in rows], [r[1] for r in rows], color="0.45")
        ax.set_xlabel("entities with attribute")
        ax.set_title("Most common attributes")
        return _save(fig, path)
