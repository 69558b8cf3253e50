"""Bayesian-optimal partitioning of a count range into bins.

The partition is scored as the sum of per-bin log-likelihoods plus the
log prior on the number of bins.  A dynamic-programming search over the
distinct observed counts finds the maximum-a-posteriori partition in
O(m^2) score evaluations, where m is the number of distinct counts; an
exhaustive enumerator over all 2^(m-1) contiguous partitions serves as
a test oracle for small m.  A cross-validated grid search selects the
prior's profile parameter by ranking held-out likelihoods.

Numerical layout
----------------
All factorial/Gamma terms go through ``scipy.special.gammaln``; nothing
is ever evaluated in probability space.  The DP and the brute-force
enumerator share one vectorised per-bin scoring primitive and accumulate
partition scores in the same left-to-right order, so exact floating-point
ties resolve identically on both paths (both prefer the earlier split,
which keeps trailing bins wide).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from .data import BinSpec, CountHistogram, CountRecord, build_histogram, histogram_from_counts

__all__ = [
    "MODELS",
    "GAMMA_GRID",
    "RATIO_GRID",
    "SPLIT_SEEDS",
    "PriorConfig",
    "PartitionFit",
    "DpTable",
    "GridSearchResult",
    "smooth",
    "bin_log_likelihood",
    "log_prior",
    "optimal_bins",
    "dp_table",
    "brute_force_bins",
    "fit_bins",
    "partition_log_likelihood",
    "held_out_likelihood",
    "rank_index_sums",
    "grid_search_gamma",
]

MODELS = ("multinomial", "poisson")

# Grid-search defaults: profile-parameter grid, held-out fractions and
# the cross-validation repeat seeds.
GAMMA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
RATIO_GRID = (0.1, 0.2, 0.25)
SPLIT_SEEDS = tuple(range(10))


@dataclass(frozen=True)
class PriorConfig:
    """Geometric prior on the number of bins.

    ``gamma`` in (0, 1) shapes the profile (smaller values penalise
    extra bins harder); ``alpha`` is the hard upper bound on the bin
    count, beyond which the prior probability is exactly zero.
    """

    gamma: float
    alpha: int

    def __post_init__(self) -> None:
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.alpha < 1:
            raise ValueError(f"alpha must be a positive integer, got {self.alpha}")


@dataclass(frozen=True)
class PartitionFit:
    """A fitted partition: inclusive integer edges plus its MAP score."""

    edges: tuple[tuple[int, int], ...]
    log_posterior: float

    @property
    def num_bins(self) -> int:
        return len(self.edges)


@dataclass(frozen=True, eq=False)
class DpTable:
    """State of the dynamic-programming search over distinct counts.

    ``best[r]`` is the accumulated score (likelihood plus per-bin
    penalty) of the optimal partition of the prefix ending at distinct
    count index r; ``last_change[r]`` is the start index of that
    partition's final bin.  ``values``/``frequencies`` are the weighted
    sequence the search ran over.
    """

    values: np.ndarray
    frequencies: np.ndarray
    best: np.ndarray
    last_change: np.ndarray

    def backtrack(self) -> list[int]:
        """Start indices (into ``values``) of each bin, in order."""
        starts: list[int] = []
        r = len(self.best) - 1
        while r >= 0:
            j = int(self.last_change[r])
            starts.append(j)
            r = j - 1
        starts.reverse()
        return starts


def smooth(hist: CountHistogram, beta: int) -> CountHistogram:
    """Additive smoothing: add ``beta`` to every integer count in [0, C].

    Fills the gaps of a sparse tail so that every candidate bin has
    strictly positive frequencies.  ``beta=0`` returns the input
    unchanged.
    """
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    if beta == 0:
        return hist
    freq = dict(hist.entries)
    entries = tuple((c, freq.get(c, 0) + beta) for c in range(hist.max_count + 1))
    return CountHistogram(entries)


def bin_log_likelihood(freqs: Sequence[int], model: str = "multinomial") -> float:
    """Log-likelihood of one bin given the frequencies of its distinct counts.

    multinomial
        log X! - sum log x_j! + sum x_j log(x_j / X), with X the bin
        total; the per-count probabilities are the plug-in maximum
        likelihood estimates x_j / X, so a bin with a single distinct
        count scores exactly 0.
    poisson
        sum over counts of the Poisson log-pmf of x_j under a shared
        rate equal to the bin's mean frequency.
    """
    x = np.asarray(freqs, dtype=float)
    if x.size == 0:
        raise ValueError("freqs must be non-empty")
    if np.any(x < 1):
        raise ValueError("frequencies must all be >= 1 (smooth the histogram first)")
    total = float(x.sum())
    if model == "multinomial":
        return float(gammaln(total + 1.0) - gammaln(x + 1.0).sum() + (x * np.log(x / total)).sum())
    if model == "poisson":
        rate = total / x.size
        return float(total * math.log(rate) - total - gammaln(x + 1.0).sum())
    raise ValueError(f"unknown likelihood model {model!r} (expected one of {MODELS})")


def log_prior(num_bins: int, prior: PriorConfig) -> float:
    """Log of the normalised geometric prior on the number of bins.

    P(n) = (1 - gamma) * gamma^(n-1) / (1 - gamma^alpha) for
    1 <= n <= alpha and 0 otherwise, which sums to one over its support.
    The commonly quoted unnormalised form gamma^n differs only by a
    constant factor, so the MAP partition is unaffected by the choice.
    """
    if num_bins < 1:
        raise ValueError(f"num_bins must be positive, got {num_bins}")
    if num_bins > prior.alpha:
        return float("-inf")
    g = prior.gamma
    return math.log1p(-g) - math.log1p(-(g**prior.alpha)) + (num_bins - 1) * math.log(g)


# ---------------------------------------------------------------------------
# shared scoring primitive

def _prefix_stats(freqs: np.ndarray, model: str) -> tuple[np.ndarray, ...]:
    """Prefix sums needed to score any contiguous bin in O(1)."""
    f = np.asarray(freqs, dtype=float)
    zero = np.zeros(1)
    total = np.concatenate([zero, np.cumsum(f)])
    lgam = np.concatenate([zero, np.cumsum(gammaln(f + 1.0))])
    if model == "multinomial":
        flogf = np.concatenate([zero, np.cumsum(f * np.log(f))])
        return total, lgam, flogf
    if model == "poisson":
        return total, lgam
    raise ValueError(f"unknown likelihood model {model!r} (expected one of {MODELS})")


def _last_bin_scores(stats: tuple[np.ndarray, ...], r: int, model: str) -> np.ndarray:
    """Log-likelihoods of the single bin spanning indices j..r, for all j <= r.

    Both the DP and the brute-force oracle take their per-bin scores
    from here, so the two searches see bitwise-identical values.
    """
    if model == "multinomial":
        total, lgam, flogf = stats
        s = total[r + 1] - total[: r + 1]
        return gammaln(s + 1.0) - (lgam[r + 1] - lgam[: r + 1]) + (flogf[r + 1] - flogf[: r + 1]) - s * np.log(s)
    total, lgam = stats
    s = total[r + 1] - total[: r + 1]
    width = np.arange(r + 1, 0, -1, dtype=float)
    return s * (np.log(s) - np.log(width)) - s - (lgam[r + 1] - lgam[: r + 1])


def _prior_constant(prior: PriorConfig) -> float:
    # log_prior(n) == _prior_constant + n * log(gamma); the DP folds the
    # linear term in per bin and adds this constant once at the end.
    g = prior.gamma
    return math.log1p(-g) - math.log1p(-(g**prior.alpha)) - math.log(g)


def _starts_to_edges(values: Sequence[int], starts: Sequence[int], max_count: int) -> tuple[tuple[int, int], ...]:
    """Convert bin start indices over distinct counts to inclusive edges.

    Each bin opens at its first observed count (the first bin always
    opens at 0) and closes just before the next bin opens; the last bin
    closes at ``max_count``.
    """
    edges = []
    for k, start in enumerate(starts):
        lo = 0 if k == 0 else int(values[start])
        hi = max_count if k == len(starts) - 1 else int(values[starts[k + 1]]) - 1
        edges.append((lo, hi))
    return tuple(edges)


# ---------------------------------------------------------------------------
# searches

def _dp_unbounded(stats: tuple[np.ndarray, ...], m: int, model: str, log_gamma: float) -> tuple[np.ndarray, np.ndarray]:
    best = np.empty(m)
    last = np.empty(m, dtype=np.int64)
    # best_shift[j] = score of the optimal partition of the prefix ending
    # just before j (0.0 for j == 0, i.e. the last bin covers everything).
    best_shift = np.empty(m + 1)
    best_shift[0] = 0.0
    for r in range(m):
        cand = best_shift[: r + 1] + _last_bin_scores(stats, r, model)
        cand += log_gamma
        j = int(np.argmax(cand))
        best[r] = cand[j]
        last[r] = j
        best_shift[r + 1] = cand[j]
    return best, last


def _dp_bounded(
    stats: tuple[np.ndarray, ...], m: int, model: str, log_gamma: float, max_bins: int
) -> tuple[float, list[int]]:
    """DP layered by bin count, for priors whose hard bound binds."""
    cap = min(max_bins, m)
    score = np.full((cap + 1, m), -np.inf)
    last = np.zeros((cap + 1, m), dtype=np.int64)
    for r in range(m):
        lik = _last_bin_scores(stats, r, model)
        score[1, r] = (0.0 + float(lik[0])) + log_gamma
        for b in range(2, min(cap, r + 1) + 1):
            cand = score[b - 1, :r] + lik[1 : r + 1]
            cand += log_gamma
            j = int(np.argmax(cand))
            score[b, r] = cand[j]
            last[b, r] = j + 1
    b_star = 1 + int(np.argmax(score[1:, m - 1]))
    starts: list[int] = []
    r, b = m - 1, b_star
    while b >= 1:
        j = int(last[b, r])
        starts.append(j)
        r, b = j - 1, b - 1
    starts.reverse()
    return float(score[b_star, m - 1]), starts


def optimal_bins(hist: CountHistogram, prior: PriorConfig, model: str = "multinomial") -> PartitionFit:
    """MAP partition of the histogram's count range.

    Runs the changepoint DP over the distinct counts, weighting each by
    its frequency; candidate splits exist only at boundaries between
    distinct counts.  Smooth the histogram first so every integer in
    [0, C] is present (the normal pipeline); sparse histograms also work,
    with bins opening at their first observed count.  Ties prefer the
    earlier split (fewer, wider trailing bins).
    """
    values = np.asarray(hist.values, dtype=np.int64)
    freqs = np.asarray(hist.frequencies, dtype=np.int64)
    m = len(values)
    stats = _prefix_stats(freqs, model)
    log_gamma = math.log(prior.gamma)

    best, last = _dp_unbounded(stats, m, model, log_gamma)
    table = DpTable(values=values, frequencies=freqs, best=best, last_change=last)
    starts = table.backtrack()
    fold = float(best[m - 1])
    if len(starts) > prior.alpha:
        fold, starts = _dp_bounded(stats, m, model, log_gamma, prior.alpha)
    edges = _starts_to_edges(values, starts, hist.max_count)
    return PartitionFit(edges=edges, log_posterior=fold + _prior_constant(prior))


def dp_table(hist: CountHistogram, prior: PriorConfig, model: str = "multinomial") -> DpTable:
    """The raw DP state for the (unbounded) search; useful for inspection."""
    values = np.asarray(hist.values, dtype=np.int64)
    freqs = np.asarray(hist.frequencies, dtype=np.int64)
    stats = _prefix_stats(freqs, model)
    best, last = _dp_unbounded(stats, len(values), model, math.log(prior.gamma))
    return DpTable(values=values, frequencies=freqs, best=best, last_change=last)


def brute_force_bins(hist: CountHistogram, prior: PriorConfig, model: str = "multinomial") -> PartitionFit:
    """Exhaustive maximiser of the same objective as :func:`optimal_bins`.

    Enumerates all 2^(m-1) contiguous partitions, so it is restricted to
    m <= 20 distinct counts.  Ties between equal-score partitions go to
    the one whose splits, read from the end, are lexicographically
    smallest -- the same preference the DP's argmax encodes.
    """
    m = hist.num_distinct
    if m > 20:
        raise ValueError(f"brute force enumeration supports at most 20 distinct counts, got {m}")
    values = hist.values
    stats = _prefix_stats(np.asarray(hist.frequencies, dtype=np.int64), model)
    lik_rows = [[float(v) for v in _last_bin_scores(stats, r, model)] for r in range(m)]
    log_gamma = math.log(prior.gamma)
    alpha = prior.alpha

    best_score = -math.inf
    best_rev: tuple[int, ...] | None = None

    def explore(start: int, acc: float, splits: list[int]) -> None:
        nonlocal best_score, best_rev
        if len(splits) + 1 > alpha:
            return
        for end in range(start, m):
            score = (acc + lik_rows[end][start]) + log_gamma
            if end == m - 1:
                rev = tuple(reversed(splits))
                if score > best_score or (score == best_score and (best_rev is None or rev < best_rev)):
                    best_score = score
                    best_rev = rev
            else:
                splits.append(end + 1)
                explore(end + 1, score, splits)
                splits.pop()

    explore(0, 0.0, [])
    if best_rev is None:
        raise ValueError("no partition satisfies the prior's bin-count bound")
    starts = [0] + sorted(best_rev)
    edges = _starts_to_edges(values, starts, hist.max_count)
    return PartitionFit(edges=edges, log_posterior=best_score + _prior_constant(prior))


def fit_bins(
    records: Iterable[CountRecord],
    gamma: float,
    *,
    alpha: int | None = None,
    beta: int = 1,
    model: str = "multinomial",
    meta: dict[str, Any] | None = None,
) -> tuple[BinSpec, float]:
    """Histogram, smooth and fit in one step; returns the bin spec and its score.

    ``alpha`` defaults to the number of distinct counts after smoothing,
    i.e. the largest meaningful bin count, so the prior's hard bound
    never bites unless explicitly tightened.
    """
    hist = smooth(build_histogram(records), beta)
    alpha_eff = hist.num_distinct if alpha is None else alpha
    fit = optimal_bins(hist, PriorConfig(gamma=gamma, alpha=alpha_eff), model)
    spec = BinSpec(
        edges=fit.edges,
        gamma=gamma,
        alpha=alpha_eff,
        beta=beta,
        meta=dict(meta or {}),
    )
    return spec, fit.log_posterior


# ---------------------------------------------------------------------------
# held-out likelihood and the gamma grid search

def partition_log_likelihood(
    hist: CountHistogram,
    edges: Sequence[tuple[int, int]],
    model: str = "multinomial",
    *,
    reference: CountHistogram | None = None,
) -> float:
    """Sum of per-bin log-likelihoods of ``hist`` grouped by ``edges``.

    With ``reference=None`` each bin uses plug-in probabilities (or a
    plug-in rate) from ``hist`` itself.  Passing a reference histogram
    instead takes per-count probabilities (multinomial) or the bin's
    mean frequency (poisson) from the reference -- the train-side
    alternative for held-out evaluation.  Counts above the top edge are
    clamped into the last bin; bins without any mass contribute zero.
    """
    if model not in MODELS:
        raise ValueError(f"unknown likelihood model {model!r} (expected one of {MODELS})")
    top = edges[-1][1]
    by_count: dict[int, int] = {}
    for value, freq in hist.entries:
        key = min(value, top)
        by_count[key] = by_count.get(key, 0) + freq

    ref_freq: dict[int, int] = {}
    if reference is not None:
        for value, freq in reference.entries:
            ref_freq[min(value, top)] = ref_freq.get(min(value, top), 0) + freq

    contributions: list[float] = []
    for lo, hi in edges:
        counts = [c for c in by_count if lo <= c <= hi]
        if not counts:
            continue
        counts.sort()
        x = np.array([by_count[c] for c in counts], dtype=float)
        if reference is None:
            contributions.append(bin_log_likelihood(x, model))
            continue
        ref_total = sum(ref_freq.get(c, 0) for c in range(lo, hi + 1))
        if ref_total == 0:
            raise ValueError(f"reference histogram has no mass in bin [{lo}, {hi}]")
        total = float(x.sum())
        if model == "multinomial":
            probs = np.array([ref_freq.get(c, 0) / ref_total for c in counts])
            if np.any(probs == 0):
                raise ValueError("reference assigns zero probability to an observed count; smooth it first")
            ll = gammaln(total + 1.0) - gammaln(x + 1.0).sum() + (x * np.log(probs)).sum()
        else:
            rate = ref_total / (hi - lo + 1)
            ll = total * math.log(rate) - x.size * rate - gammaln(x + 1.0).sum()
        contributions.append(float(ll))
    return math.fsum(contributions)


def held_out_likelihood(
    counts: Sequence[int],
    ratio: float,
    gamma: float,
    seed: int,
    *,
    beta: int = 1,
    alpha: int | None = None,
    model: str = "multinomial",
    prob_source: str = "test",
) -> float:
    """Log-likelihood of a held-out subset under bins fitted on the rest.

    The count multiset is shuffled with ``seed`` and cut so that
    ``ratio`` of it is held out.  Both sides are smoothed independently
    after the split; bins are fitted on the retained side and the
    held-out side is scored by :func:`partition_log_likelihood`.
    Held-out counts above the fitted range clamp onto its top count.
    ``prob_source`` selects whether the per-count probabilities come
    from the held-out data itself (``"test"``, the default) or from the
    fitted side (``"train"``).
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if prob_source not in ("test", "train"):
        raise ValueError(f"prob_source must be 'test' or 'train', got {prob_source!r}")
    pool = np.asarray(list(counts), dtype=np.int64)
    n = pool.size
    n_test = int(round(ratio * n))
    if n_test == 0 or n_test == n:
        raise ValueError(f"ratio {ratio} leaves an empty side for {n} samples")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    test = pool[perm[:n_test]]
    train = pool[perm[n_test:]]

    train_hist = smooth(histogram_from_counts(train), beta)
    alpha_eff = train_hist.num_distinct if alpha is None else alpha
    fit = optimal_bins(train_hist, PriorConfig(gamma=gamma, alpha=alpha_eff), model)

    test_hist = smooth(histogram_from_counts(np.minimum(test, train_hist.max_count)), beta)
    reference = train_hist if prob_source == "train" else None
    return partition_log_likelihood(test_hist, fit.edges, model, reference=reference)


def rank_index_sums(mean_likelihoods: np.ndarray) -> np.ndarray:
    """Per-gamma sums of descending-sort indices across ratio columns.

    ``mean_likelihoods[i, j]`` is the seed-averaged held-out likelihood
    of gamma i under ratio j.  Within each column, gammas are ranked by
    descending likelihood (ties keep grid order) and each gamma's rank
    indices are summed across columns; lower is better.
    """
    table = np.asarray(mean_likelihoods, dtype=float)
    if table.ndim != 2:
        raise ValueError("mean_likelihoods must be a 2-D (gamma x ratio) table")
    sums = np.zeros(table.shape[0], dtype=np.int64)
    for j in range(table.shape[1]):
        order = np.argsort(-table[:, j], kind="stable")
        ranks = np.empty_like(order)
        ranks[order] = np.arange(len(order))
        sums += ranks
    return sums


@dataclass(frozen=True, eq=False)
class GridSearchResult:
    """Outcome of the cross-validated gamma search."""

    gamma: float
    bins: BinSpec
    log_posterior: float
    gammas: tuple[float, ...]
    ratios: tuple[float, ...]
    seeds: tuple[int, ...]
    mean_likelihoods: np.ndarray
    index_sums: np.ndarray


def grid_search_gamma(
    records: Sequence[CountRecord],
    *,
    gammas: Sequence[float] = GAMMA_GRID,
    ratios: Sequence[float] = RATIO_GRID,
    seeds: Sequence[int] = SPLIT_SEEDS,
    beta: int = 1,
    alpha: int | None = None,
    model: str = "multinomial",
    prob_source: str = "test",
    workers: int | None = None,
    meta: dict[str, Any] | None = None,
) -> GridSearchResult:
    """Select gamma by cross-validated held-out likelihood, then fit final bins.

    For every (gamma, ratio) cell the held-out likelihood is averaged
    over the repeat seeds; per ratio, gammas are ranked by descending
    mean likelihood and each gamma's rank indices are summed across
    ratios.  The gamma with the lowest index sum wins (ties go to the
    smaller gamma), and the final bins are fitted on the full data with
    it.  Cells are pure functions of their arguments, so evaluating them
    on a thread pool changes nothing but wall time.
    """
    records = list(records)
    if len(records) < 10:
        raise ValueError(f"grid search needs at least 10 records, got {len(records)}")
    if not gammas:
        raise ValueError("gammas must be non-empty")
    if not ratios:
        raise ValueError("ratios must be non-empty")
    if not seeds:
        raise ValueError("seeds must be non-empty")
    counts = [r.count for r in records]

    cells = [(i, j, seed) for i in range(len(gammas)) for j in range(len(ratios)) for seed in seeds]

    def evaluate(cell: tuple[int, int, int]) -> float:
        i, j, seed = cell
        return held_out_likelihood(
            counts,
            ratios[j],
            gammas[i],
            seed,
            beta=beta,
            alpha=alpha,
            model=model,
            prob_source=prob_source,
        )

    if workers is not None and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(evaluate, cells))
    else:
        results = [evaluate(cell) for cell in cells]

    mean_lik = np.empty((len(gammas), len(ratios)))
    per_cell = dict(zip(cells, results))
    for i in range(len(gammas)):
        for j in range(len(ratios)):
            mean_lik[i, j] = float(np.mean([per_cell[(i, j, seed)] for seed in seeds]))

    index_sums = rank_index_sums(mean_lik)
    best_gamma = float(gammas[int(np.argmin(index_sums))])
    bins, score = fit_bins(records, best_gamma, alpha=alpha, beta=beta, model=model, meta=meta)
    return GridSearchResult(
        gamma=best_gamma,
        bins=bins,
        log_posterior=score,
        gammas=tuple(float(g) for g in gammas),
        ratios=tuple(float(r) for r in ratios),
        seeds=tuple(int(s) for s in seeds),
        mean_likelihoods=mean_lik,
        index_sums=index_sums,
    )
