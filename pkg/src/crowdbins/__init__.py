"""Skew-aware tooling for heavy-tailed count datasets.

The package covers four pipeline stages for crowd-counting style data,
independent of any neural-network framework: Bayesian-optimal binning of
the count range, balanced minibatch scheduling over the bins, a
bin-aware loss kernel, and inclusive evaluation metrics (per-bin and
pooled statistics, TPER curves, GAME).
"""

from .binning import (
    GAMMA_GRID,
    MODELS,
    RATIO_GRID,
    SPLIT_SEEDS,
    GridSearchResult,
    PartitionFit,
    PriorConfig,
    bin_log_likelihood,
    brute_force_bins,
    fit_bins,
    grid_search_gamma,
    held_out_likelihood,
    log_prior,
    optimal_bins,
    partition_log_likelihood,
    rank_index_sums,
    smooth,
)
from .data import (
    BinSpec,
    CountHistogram,
    CountRecord,
    DataFormatError,
    PointAnnotatedRecord,
    PredictionRecord,
    assign_bin,
    build_histogram,
    histogram_from_counts,
    load_bins,
    load_counts,
    load_points,
    load_predictions,
    save_bins,
)
from .loss import (
    LossConfig,
    batch_bin_loss,
    bin_loss,
    combined_loss,
    lambda_grid,
    per_record_bin_losses,
)
from .metrics import (
    DEFAULT_THETAS,
    BinStats,
    GameResult,
    GlobalStats,
    PooledStats,
    TperCurve,
    evaluation_report,
    game,
    global_stats,
    per_bin_stats,
    pooled_stats,
    tper_curve,
)
from .sampling import SCHEMES, Schedule, schedule_rr, schedule_rs

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # data
    "DataFormatError",
    "CountRecord",
    "CountHistogram",
    "PredictionRecord",
    "PointAnnotatedRecord",
    "BinSpec",
    "assign_bin",
    "build_histogram",
    "histogram_from_counts",
    "load_counts",
    "load_predictions",
    "load_points",
    "load_bins",
    "save_bins",
    # binning
    "MODELS",
    "GAMMA_GRID",
    "RATIO_GRID",
    "SPLIT_SEEDS",
    "PriorConfig",
    "PartitionFit",
    "GridSearchResult",
    "smooth",
    "bin_log_likelihood",
    "log_prior",
    "optimal_bins",
    "brute_force_bins",
    "fit_bins",
    "partition_log_likelihood",
    "held_out_likelihood",
    "rank_index_sums",
    "grid_search_gamma",
    # sampling
    "SCHEMES",
    "Schedule",
    "schedule_rr",
    "schedule_rs",
    # loss
    "LossConfig",
    "bin_loss",
    "combined_loss",
    "per_record_bin_losses",
    "batch_bin_loss",
    "lambda_grid",
    # metrics
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
