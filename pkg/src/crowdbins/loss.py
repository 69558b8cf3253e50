"""Bin-aware loss kernel and the combined training objective.

The kernel penalises a prediction logarithmically while it stays inside
the ground truth's bin and linearly (plain absolute error) once it
leaves it; the combined objective adds the weighted kernel on top of
whatever loss the consuming model already optimises.

The kernel is a plain scalar function: gradients are the consumer's
business.  For reimplementation inside an autodiff framework, the
derivative with respect to the prediction is sign(pred - count) *
lambda1 / (1 + |count - pred|) on the logarithmic branch and
sign(pred - count) on the linear branch, with a jump where the
prediction crosses a bin edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import BinSpec, PredictionRecord, assign_bin

__all__ = [
    "LossConfig",
    "bin_loss",
    "combined_loss",
    "per_record_bin_losses",
    "batch_bin_loss",
    "lambda_grid",
]


@dataclass(frozen=True)
class LossConfig:
    """Weights of the bin-aware term: lambda1 scales the logarithmic
    branch, lambda2 scales the whole term when added to a model loss."""

    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self) -> None:
        if self.lambda1 < 0:
            raise ValueError(f"lambda1 must be non-negative, got {self.lambda1}")
        if self.lambda2 < 0:
            raise ValueError(f"lambda2 must be non-negative, got {self.lambda2}")


_DEFAULT = LossConfig()


def bin_loss(count: int, predicted: float, bins: BinSpec, cfg: LossConfig = _DEFAULT) -> float:
    """Piecewise penalty keyed to the ground truth's bin.

    With [lo, hi] the bin containing ``count``: returns
    lambda1 * ln(1 + |count - predicted|) when lo <= predicted <= hi
    (inclusive endpoints, real-valued membership test) and plain
    |count - predicted| otherwise.  Natural logarithm; lambda1 absorbs
    any base change.
    """
    lo, hi = bins.edges[assign_bin(count, bins)]
    err = abs(count - predicted)
    if lo <= predicted <= hi:
        return cfg.lambda1 * math.log1p(err)
    return err


def combined_loss(
    model_loss: float,
    count: int,
    predicted: float,
    bins: BinSpec,
    cfg: LossConfig = _DEFAULT,
) -> float:
    """Model loss plus the lambda2-weighted bin-aware term."""
    if not math.isfinite(model_loss):
        raise ValueError(f"model_loss must be finite, got {model_loss}")
    return model_loss + cfg.lambda2 * bin_loss(count, predicted, bins, cfg)


def per_record_bin_losses(
    records: Iterable[PredictionRecord], bins: BinSpec, cfg: LossConfig = _DEFAULT
) -> list[float]:
    return [bin_loss(r.gt_count, r.pred_count, bins, cfg) for r in records]


def batch_bin_loss(
    records: Sequence[PredictionRecord],
    bins: BinSpec,
    cfg: LossConfig = _DEFAULT,
    reduction: str = "mean",
) -> float:
    """Bin loss reduced over a batch (mean by default, or sum)."""
    if not records:
        raise ValueError("batch must be non-empty")
    total = math.fsum(per_record_bin_losses(records, bins, cfg))
    if reduction == "mean":
        return total / len(records)
    if reduction == "sum":
        return total
    raise ValueError(f"unknown reduction {reduction!r} (expected 'mean' or 'sum')")


def lambda_grid(
    records: Sequence[PredictionRecord],
    bins: BinSpec,
    model_losses: Sequence[float],
    lambda1s: Sequence[float] = (1.0, 10.0, 100.0),
    lambda2s: Sequence[float] = (0.01, 1.0),
) -> np.ndarray:
    """Mean combined loss over the (lambda1, lambda2) ablation grid.

    Row i, column j holds the batch-mean of
    model_loss + lambda2s[j] * bin_loss(..., lambda1s[i]).
    """
    if len(model_losses) != len(records):
        raise ValueError("model_losses must align with records")
    table = np.empty((len(lambda1s), len(lambda2s)))
    for i, l1 in enumerate(lambda1s):
        kernel = per_record_bin_losses(records, bins, LossConfig(lambda1=l1, lambda2=1.0))
        for j, l2 in enumerate(lambda2s):
            table[i, j] = math.fsum(m + l2 * k for m, k in zip(model_losses, kernel)) / len(records)
    return table
