"""Report figures.  Rendering is headless (Agg) and writes PNG files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_prepare_report(durations: Sequence[float], shard_sizes: Sequence[int], path: str | Path, max_duration: float = 30.0) -> Path:
    with plt.rc_context(RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
        ax1.hist(durations, bins=30, range=(0, max(max_duration, max(durations, default=0))), color="0.4")
        ax1.axvline(max_duration, color="C3", lw=1, ls="--", label=f"{max_duration:g} s limit")
        ax1.set_xlabel("window duration (s)")
        ax1.set_ylabel("samples")
        ax1.legend()
        ax2.bar(range(len(shard_sizes)), shard_sizes, color="C0")
        ax2.set_xlabel("shard")
        ax2.set_ylabel("samples")
        ax2.set_xticks(range(len(shard_sizes)))
        return _save(fig, path)


def plot_error_rates(ids: Sequence[str], rates: Sequence[float], corpus_rate: float, metric: str, path: str | Path) -> Path:
    with plt.rc_context(RC):
        width = min(max(4.0, 0.25 * len(ids) + 2), 16)
        fig, ax = plt.subplots(figsize=(width, 3))
        ax.bar(range(len(rates)), [100 * r for r in rates], color="0.5")
        ax.axhline(100 * corpus_rate, color="C3", lw=1, label=f"corpus {metric.upper()} {100 * corpus_rate:.1f}%")
        ax.set_ylabel(f"{metric.upper()} (%)")
        ax.set_xlabel("utterance")
        if len(ids) <= 40:
            ax.set_xticks(range(len(ids)))
            ax.set_xticklabels(ids, rotation=90, fontsize=6)
        ax.legend()
        return _save(fig, path)


def plot_longform_timeline(segments, trace, duration: float, path: str | Path, chunk_seconds: float = 30.0) -> Path:
    """Decoding windows (top) against emitted segments (bottom)."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(8, 2.4))
        for c in trace:
            ax.broken_barh([(c.cursor, chunk_seconds)], (1.1, 0.8), facecolors="C0", alpha=0.25, edgecolor="C0")
            ax.plot([c.cursor + c.shift] * 2, [1.1, 1.9], color="C0", lw=1)
        ax.broken_barh([(s.start, max(s.end - s.start, 1e-3)) for s in segments], (0.1, 0.8), facecolors="C2")
        ax.axvline(duration, color="k", lw=1, ls=":")
        ax.set_yticks([0.5, 1.5])
        ax.set_yticklabels(["segments", "windows"])
        ax.set_xlabel("time (s)")
        ax.set_xlim(0, max(duration, max((c.cursor + chunk_seconds for c in trace), default=0)))
        return _save(fig, path)


def plot_decoding_comparison(scores: dict[str, float], path: str | Path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        names = list(scores)
        ax.bar(names, [scores[n] for n in names], color=["C0", "C1", "C2"][: len(names)])
        ax.set_ylabel("joint score of best hypothesis")
        return _save(fig, path)
