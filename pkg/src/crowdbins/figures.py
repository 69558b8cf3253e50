"""Figure rendering for the report path.

Every function draws one figure and writes it straight to a file; the
Agg backend keeps rendering headless.  The CLI calls these alongside
its delimited outputs unless figures are switched off.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .data import BinSpec, CountHistogram
from .metrics import BinStats, GameResult, TperCurve

__all__ = [
    "save_histogram_figure",
    "save_per_bin_figure",
    "save_tper_figure",
    "save_game_figure",
]

plt.rcParams.update(
    {
        "figure.figsize": (8, 5),
        "axes.grid": True,
        "grid.alpha": 0.3,
        "axes.titlesize": 12,
        "axes.labelsize": 11,
    }
)


def _finish(fig: "plt.Figure", path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_histogram_figure(hist: CountHistogram, bins: BinSpec, path: str | Path) -> Path:
    """Count-frequency distribution with the fitted bin boundaries overlaid."""
    fig, ax = plt.subplots()
    ax.bar(hist.values, hist.frequencies, width=1.0, color="steelblue", label="frequency")
    for lo, _ in bins.edges[1:]:
        ax.axvline(lo - 0.5, color="firebrick", linewidth=1.0, alpha=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("count")
    ax.set_ylabel("frequency")
    ax.set_title(f"count distribution and {bins.num_bins} fitted bins")
    return _finish(fig, path)


def save_per_bin_figure(stats: Sequence[BinStats], bins: BinSpec, path: str | Path) -> Path:
    """Per-bin mean absolute error with one-sigma bars."""
    filled = [s for s in stats if s.n > 0]
    fig, ax = plt.subplots()
    xs = [s.bin_index for s in filled]
    means = [s.mean_abs_err for s in filled]
    stds = [s.std_abs_err for s in filled]
    ax.bar(xs, means, yerr=stds, capsize=3, color="steelblue", ecolor="gray")
    # Interval tick labels only stay readable for a modest bin count.
    if bins.num_bins <= 40:
        ax.set_xticks(range(bins.num_bins))
        ax.set_xticklabels(
            [f"[{lo},{hi}]" for lo, hi in bins.edges], rotation=45, ha="right", fontsize=8
        )
    ax.set_xlabel("count bin")
    ax.set_ylabel("mean absolute error")
    ax.set_title("per-bin error (bars show one standard deviation)")
    return _finish(fig, path)


def save_tper_figure(curve: TperCurve, path: str | Path) -> Path:
    """TPER against the threshold grid, AUC annotated."""
    fig, ax = plt.subplots()
    ax.plot(curve.thetas, curve.values, marker="o", markersize=3, color="steelblue")
    ax.set_xlabel("error threshold (multiple of ground-truth count)")
    ax.set_ylabel("fraction of images")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"thresholded percentage error ratio (AUC={curve.auc_normalized:.3f})")
    return _finish(fig, path)


def save_game_figure(results: Sequence[GameResult], path: str | Path) -> Path:
    """GAME values across subdivision levels."""
    fig, ax = plt.subplots()
    levels = [r.level for r in results]
    ax.plot(levels, [r.value for r in results], marker="s", color="steelblue")
    ax.set_xticks(levels)
    ax.set_xlabel("subdivision level L")
    ax.set_ylabel("GAME(L)")
    ax.set_title("grid average mean absolute error")
    return _finish(fig, path)
