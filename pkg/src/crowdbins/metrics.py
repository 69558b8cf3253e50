"""Inclusive evaluation metrics for count predictions.

Beyond global MAE/MSE, the suite reports error statistics per count bin,
pools them into a sample-size-weighted summary, traces the thresholded
percentage-error ratio (TPER) across a threshold grid, and computes the
grid average mean absolute error (GAME) from point annotations.

A note on TPER: despite the name, the threshold is a *multiplier* on
the ground-truth count, not a percent -- TPER at theta counts the test
images whose absolute error is at least theta times the ground truth.
Zero-count images satisfy the inequality at every threshold under the
literal definition; ``skip_exact`` excludes exactly-predicted images
from the numerator instead.

All reductions use compensated summation (``math.fsum``) so results do
not depend on accumulation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .data import BinSpec, PointAnnotatedRecord, PredictionRecord, assign_bin

__all__ = [
    "DEFAULT_THETAS",
    "BinStats",
    "PooledStats",
    "GlobalStats",
    "TperCurve",
    "GameResult",
    "per_bin_stats",
    "pooled_stats",
    "global_stats",
    "tper_curve",
    "game",
    "evaluation_report",
]

DEFAULT_THETAS = tuple(range(0, 101, 5))


@dataclass(frozen=True)
class BinStats:
    """Absolute-error statistics of one bin; empty bins carry None stats."""

    bin_index: int
    n: int
    mean_abs_err: float | None
    std_abs_err: float | None
    total_abs_err: float

    @property
    def empty(self) -> bool:
        return self.n == 0


@dataclass(frozen=True)
class PooledStats:
    """Sample-size-weighted aggregation of per-bin statistics."""

    mean_abs_err: float
    std_abs_err: float
    n: int


@dataclass(frozen=True)
class GlobalStats:
    """Unbinned error statistics over the whole prediction set."""

    mae: float
    mse: float
    std_abs_err: float
    n: int


@dataclass(frozen=True)
class TperCurve:
    """Fraction of images with |error| >= theta * gt, per threshold."""

    thetas: tuple[float, ...]
    values: tuple[float, ...]
    auc_raw: float
    auc_normalized: float
    n: int


@dataclass(frozen=True)
class GameResult:
    """Grid average mean absolute error at one subdivision level."""

    level: int
    value: float
    per_image: tuple[float, ...]


def _abs_errors(preds: Sequence[PredictionRecord]) -> list[float]:
    return [abs(r.gt_count - r.pred_count) for r in preds]


def _mean_std(errors: Sequence[float], sample_std: bool) -> tuple[float, float, float]:
    total = math.fsum(errors)
    mean = total / len(errors)
    denom = len(errors) - 1 if sample_std else len(errors)
    if denom <= 0:
        return mean, 0.0, total
    var = math.fsum((e - mean) ** 2 for e in errors) / denom
    return mean, math.sqrt(var), total


def per_bin_stats(
    preds: Sequence[PredictionRecord], bins: BinSpec, *, sample_std: bool = False
) -> list[BinStats]:
    """Absolute errors grouped by the ground truth's bin.

    Standard deviations divide by n by default (population convention,
    the one consistent with sample-size-weighted pooling); pass
    ``sample_std=True`` for the n-1 convention.  Every bin appears in
    the output, empty ones with n=0 and None statistics, so reports for
    different models align bin-for-bin.
    """
    if not preds:
        raise ValueError("prediction list must be non-empty")
    grouped: list[list[float]] = [[] for _ in range(bins.num_bins)]
    for record in preds:
        grouped[assign_bin(record.gt_count, bins)].append(abs(record.gt_count - record.pred_count))
    out: list[BinStats] = []
    for index, errors in enumerate(grouped):
        if not errors:
            out.append(BinStats(index, 0, None, None, 0.0))
            continue
        mean, std, total = _mean_std(errors, sample_std)
        out.append(BinStats(index, len(errors), mean, std, total))
    return out


def pooled_stats(bin_stats: Sequence[BinStats]) -> PooledStats:
    """Pool per-bin means and variances, weighted by bin sample counts.

    mean_pool = sum(n_i mu_i) / sum(n_i) and
    var_pool = sum(n_i sigma_i^2) / sum(n_i); empty bins are excluded.
    """
    filled = [s for s in bin_stats if s.n > 0]
    if not filled:
        raise ValueError("all bins are empty")
    total_n = sum(s.n for s in filled)
    mean = math.fsum(s.n * s.mean_abs_err for s in filled) / total_n
    var = math.fsum(s.n * s.std_abs_err**2 for s in filled) / total_n
    return PooledStats(mean_abs_err=mean, std_abs_err=math.sqrt(var), n=total_n)


def global_stats(preds: Sequence[PredictionRecord], *, sample_std: bool = False) -> GlobalStats:
    """Unbinned MAE, MSE and the standard deviation of the absolute error."""
    if not preds:
        raise ValueError("prediction list must be non-empty")
    errors = _abs_errors(preds)
    mean, std, _ = _mean_std(errors, sample_std)
    mse = math.fsum(e**2 for e in errors) / len(errors)
    return GlobalStats(mae=mean, mse=mse, std_abs_err=std, n=len(errors))


def tper_curve(
    preds: Sequence[PredictionRecord],
    thetas: Sequence[float] | None = None,
    *,
    skip_exact: bool = False,
) -> TperCurve:
    """Thresholded percentage-error ratio across a threshold grid.

    TPER at theta is the fraction of images with
    |gt - pred| >= theta * gt, evaluated literally in multiplicative
    form (no division, so zero ground truths need no special casing).
    The area under the curve is reported both raw (trapezoidal over the
    theta grid) and normalised by the grid span into [0, 1].
    """
    if not preds:
        raise ValueError("prediction list must be non-empty")
    grid = DEFAULT_THETAS if thetas is None else tuple(float(t) for t in thetas)
    if not grid:
        raise ValueError("thetas must be non-empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("thetas must be sorted ascending")
    n = len(preds)
    values = []
    for theta in grid:
        hits = 0
        for r in preds:
            err = abs(r.gt_count - r.pred_count)
            if skip_exact and err == 0:
                continue
            if err >= theta * r.gt_count:
                hits += 1
        values.append(hits / n)
    auc_raw = math.fsum(
        (grid[i + 1] - grid[i]) * (values[i] + values[i + 1]) / 2.0 for i in range(len(grid) - 1)
    )
    span = grid[-1] - grid[0]
    auc_norm = auc_raw / span if span > 0 else 0.0
    return TperCurve(
        thetas=tuple(grid), values=tuple(values), auc_raw=auc_raw, auc_normalized=auc_norm, n=n
    )


def _cell_counts(points: Sequence[tuple[float, float]], width: float, height: float, level: int) -> np.ndarray:
    side = 1 << level
    counts = np.zeros(side * side, dtype=np.int64)
    if not points:
        return counts
    pts = np.asarray(points, dtype=float)
    # Half-open cells: a point exactly on an interior grid line belongs to
    # the higher-index cell, which searchsorted(side="right") encodes.
    # Scaling by a power of two keeps boundary comparisons exact.
    col = np.searchsorted(width * np.arange(side + 1), pts[:, 0] * side, side="right") - 1
    row = np.searchsorted(height * np.arange(side + 1), pts[:, 1] * side, side="right") - 1
    col = np.clip(col, 0, side - 1)
    row = np.clip(row, 0, side - 1)
    np.add.at(counts, row * side + col, 1)
    return counts


def game(records: Sequence[PointAnnotatedRecord], level: int) -> GameResult:
    """Grid average mean absolute error at subdivision level L.

    Each image is split into a 2^L x 2^L grid of equal cells (each axis
    subdivided independently); the per-image score sums the absolute
    difference between ground-truth and predicted point counts over the
    cells, and the result averages those scores over images.  Level 0
    is exactly the MAE of the point totals.
    """
    if not records:
        raise ValueError("record list must be non-empty")
    if level < 0:
        raise ValueError(f"level must be non-negative, got {level}")
    if level > 6:
        raise ValueError(f"level {level} exceeds the practical bound of 6")
    per_image = []
    for record in records:
        gt = _cell_counts(record.gt_points, record.width, record.height, level)
        pred = _cell_counts(record.pred_points, record.width, record.height, level)
        per_image.append(float(np.abs(gt - pred).sum()))
    value = math.fsum(per_image) / len(per_image)
    return GameResult(level=level, value=value, per_image=tuple(per_image))


def evaluation_report(
    preds: Sequence[PredictionRecord],
    bins: BinSpec,
    *,
    thetas: Sequence[float] | None = None,
    points: Sequence[PointAnnotatedRecord] | None = None,
    game_levels: Sequence[int] = (0, 1, 2, 3),
    sample_std: bool = False,
    skip_exact: bool = False,
) -> dict[str, Any]:
    """Assemble the full evaluation report as a JSON-ready dictionary."""
    stats = per_bin_stats(preds, bins, sample_std=sample_std)
    pooled = pooled_stats(stats)
    overall = global_stats(preds, sample_std=sample_std)
    curve = tper_curve(preds, thetas, skip_exact=skip_exact)
    report: dict[str, Any] = {
        "bins": [[lo, hi] for lo, hi in bins.edges],
        "per_bin": [
            {
                "bin_index": s.bin_index,
                "lo": bins.edges[s.bin_index][0],
                "hi": bins.edges[s.bin_index][1],
                "n": s.n,
                "mae": s.mean_abs_err,
                "std": s.std_abs_err,
            }
            for s in stats
        ],
        "pooled": {"mae": pooled.mean_abs_err, "std": pooled.std_abs_err, "n": pooled.n},
        "global": {
            "mae": overall.mae,
            "mse": overall.mse,
            "std": overall.std_abs_err,
            "n": overall.n,
        },
        "tper": {
            "thetas": list(curve.thetas),
            "values": list(curve.values),
            "auc_raw": curve.auc_raw,
            "auc_normalized": curve.auc_normalized,
        },
        "game": [],
    }
    if points:
        report["game"] = [
            {"L": level, "value": game(points, level).value} for level in game_levels
        ]
    return report
