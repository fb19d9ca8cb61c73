"""Figures written next to the delimited reports (PNG, PDF or SVG by suffix)."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import DetectorHistogram  # noqa: E402
from .modem import TapStats  # noqa: E402

__all__ = ["plot_histogram", "plot_sweep", "plot_tap_profile", "plot_buffer"]


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_histogram(hist: DetectorHistogram, path, title: Optional[str] = None) -> Path:
    """Click counts per detector, with the double-click bar kept separate."""
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    labels = ["D1", "D2", "both"]
    counts = [hist.d1, hist.d2, hist.both]
    bars = ax.bar(labels, counts, color=["#3a6ea5", "#c0504d", "#7f7f7f"])
    singles = hist.d1 + hist.d2
    if singles:
        for bar, count in zip(bars[:2], counts[:2]):
            ax.annotate(
                f"{count / singles:.1%}",
                (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                ha="center",
                va="bottom",
                fontsize=9,
            )
    ax.set_ylabel("counts")
    ax.set_title(title or f"photon counts over {hist.total:,} gates", fontsize=10)
    return _save(fig, path)


def plot_sweep(parameter: str, rows: Sequence, path) -> Path:
    values = np.array([r[0] for r in rows], dtype=float)
    fcr = np.array([np.nan if r[2] is None else r[2] for r in rows], dtype=float)
    q = np.array([np.nan if r[3] is None else r[3] for r in rows], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(values, fcr, "o-", label="false count rate")
    ax.plot(values, q, "s--", label="QBER")
    ax.axhline(0.30, color="k", lw=0.8, ls=":")
    ax.set_xlabel(parameter)
    ax.set_ylabel("fraction")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_tap_profile(stats: TapStats, path, chosen: Optional[int] = None) -> Path:
    scores = stats.flip_score
    fig, ax = plt.subplots(figsize=(5, 3))
    colors = ["#c0504d" if i == chosen else "#3a6ea5" for i in range(len(scores))]
    ax.bar(np.arange(len(scores)), scores, color=colors)
    ax.set_xlabel("tap")
    ax.set_ylabel("flip score")
    ax.set_ylim(0, 1.05)
    return _save(fig, path)


def plot_buffer(occupancy: np.ndarray, capacity: int, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(np.arange(occupancy.size), occupancy, lw=0.8)
    ax.axhline(capacity, color="k", lw=0.8, ls=":")
    ax.set_xlabel("tick")
    ax.set_ylabel("symbols buffered")
    return _save(fig, path)
