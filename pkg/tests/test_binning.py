import math

import numpy as np
import pytest
from scipy import stats

from crowdbins.binning import (
    GAMMA_GRID,
    PriorConfig,
    bin_log_likelihood,
    brute_force_bins,
    dp_table,
    fit_bins,
    grid_search_gamma,
    held_out_likelihood,
    log_prior,
    optimal_bins,
    partition_log_likelihood,
    rank_index_sums,
    smooth,
)
from crowdbins.data import CountHistogram, histogram_from_counts

from conftest import make_records


def random_histogram(rng, max_distinct=12, max_value=60, max_freq=50) -> CountHistogram:
    m = int(rng.integers(1, max_distinct + 1))
    values = np.sort(rng.choice(max_value, size=m, replace=False))
    freqs = rng.integers(1, max_freq + 1, size=m)
    return CountHistogram(tuple((int(v), int(f)) for v, f in zip(values, freqs)))


class TestSmooth:
    def test_fills_gaps(self):
        hist = CountHistogram(((0, 3), (2, 1)))
        assert smooth(hist, 1).entries == ((0, 4), (1, 1), (2, 2))

    def test_beta_zero_is_identity(self):
        hist = CountHistogram(((0, 3), (2, 1)))
        assert smooth(hist, 0) is hist

    def test_range_fixed_by_max_count(self):
        hist = CountHistogram(((5, 2),))
        assert smooth(hist, 1).entries == ((0, 1), (1, 1), (2, 1), (3, 1), (4, 1), (5, 3))

    def test_total_grows_by_beta_times_range(self):
        hist = CountHistogram(((0, 3), (7, 2)))
        beta = 3
        assert smooth(hist, beta).total == hist.total + beta * (hist.max_count + 1)

    def test_negative_beta_rejected(self):
        with pytest.raises(ValueError):
            smooth(CountHistogram(((0, 1),)), -1)


class TestBinLogLikelihood:
    def test_single_distinct_count_is_exactly_zero(self):
        for n in (1, 5, 1000):
            assert bin_log_likelihood([n]) == 0.0

    def test_two_singletons(self):
        assert bin_log_likelihood([1, 1]) == pytest.approx(-math.log(2), abs=1e-12)

    def test_two_pairs(self):
        expected = math.log(6) - 4 * math.log(2)
        assert bin_log_likelihood([2, 2]) == pytest.approx(expected, abs=1e-12)

    def test_multinomial_matches_scipy(self, rng):
        for _ in range(50):
            freqs = rng.integers(1, 40, size=int(rng.integers(1, 8)))
            total = int(freqs.sum())
            expected = stats.multinomial(total, freqs / total).logpmf(freqs)
            assert bin_log_likelihood(freqs) == pytest.approx(float(expected), abs=1e-9)

    def test_poisson_matches_scipy(self, rng):
        for _ in range(50):
            freqs = rng.integers(1, 40, size=int(rng.integers(1, 8)))
            rate = freqs.sum() / freqs.size
            expected = stats.poisson(rate).logpmf(freqs).sum()
            assert bin_log_likelihood(freqs, "poisson") == pytest.approx(float(expected), abs=1e-9)

    def test_zero_frequency_rejected(self):
        with pytest.raises(ValueError):
            bin_log_likelihood([0, 3])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            bin_log_likelihood([])

    def test_unknown_model_rejected(self):
        with pytest.raises(ValueError):
            bin_log_likelihood([1], "gaussian")


class TestLogPrior:
    def test_zero_probability_beyond_alpha(self):
        prior = PriorConfig(gamma=0.5, alpha=4)
        assert log_prior(5, prior) == float("-inf")

    def test_normalisation(self):
        for gamma in GAMMA_GRID:
            for alpha in range(1, 65):
                total = math.fsum(
                    math.exp(log_prior(n, PriorConfig(gamma, alpha))) for n in range(1, alpha + 1)
                )
                assert total == pytest.approx(1.0, abs=1e-12)

    def test_value(self):
        # P(1) = (1 - 0.5) / (1 - 0.25) = 2/3 under the normalised prior.
        assert log_prior(1, PriorConfig(0.5, 2)) == pytest.approx(math.log(2 / 3), abs=1e-12)

    def test_geometric_slope(self):
        prior = PriorConfig(0.3, 10)
        for n in range(1, 10):
            assert log_prior(n + 1, prior) - log_prior(n, prior) == pytest.approx(
                math.log(0.3), abs=1e-12
            )

    def test_invalid_num_bins(self):
        with pytest.raises(ValueError):
            log_prior(0, PriorConfig(0.5, 2))


class TestOptimalBins:
    def test_single_distinct_count(self):
        hist = CountHistogram(((0, 5),))
        prior = PriorConfig(0.5, 1)
        fit = optimal_bins(hist, prior)
        assert fit.edges == ((0, 0),)
        assert fit.log_posterior == pytest.approx(log_prior(1, prior), abs=1e-12)

    def test_four_entry_example_matches_oracle(self):
        hist = CountHistogram(((0, 100), (1, 100), (50, 100), (51, 100)))
        prior = PriorConfig(0.5, 4)
        dp = optimal_bins(hist, prior)
        bf = brute_force_bins(hist, prior)
        assert dp.edges == bf.edges
        assert dp.log_posterior == pytest.approx(bf.log_posterior, abs=1e-9)

    def test_tiny_gamma_collapses_to_single_bin(self, rng):
        for _ in range(10):
            hist = random_histogram(rng, max_distinct=6)
            prior = PriorConfig(1e-6, hist.num_distinct)
            dp = optimal_bins(hist, prior)
            bf = brute_force_bins(hist, prior)
            assert dp.edges == bf.edges == ((0, hist.max_count),)

    @pytest.mark.parametrize("model", ["multinomial", "poisson"])
    @pytest.mark.parametrize("gamma", [0.1, 0.5, 0.9])
    def test_matches_oracle(self, rng, model, gamma):
        for _ in range(30):
            hist = random_histogram(rng)
            prior = PriorConfig(gamma, hist.num_distinct)
            dp = optimal_bins(hist, prior, model)
            bf = brute_force_bins(hist, prior, model)
            assert dp.edges == bf.edges
            assert dp.log_posterior == pytest.approx(bf.log_posterior, abs=1e-9)

    def test_matches_oracle_with_binding_alpha(self, rng):
        for _ in range(30):
            hist = random_histogram(rng)
            alpha = max(1, hist.num_distinct // 2)
            prior = PriorConfig(0.9, alpha)
            dp = optimal_bins(hist, prior)
            bf = brute_force_bins(hist, prior)
            assert dp.num_bins <= alpha
            assert dp.edges == bf.edges
            assert dp.log_posterior == pytest.approx(bf.log_posterior, abs=1e-9)

    def test_score_decomposes_over_returned_edges(self, rng):
        for model in ("multinomial", "poisson"):
            hist = smooth(random_histogram(rng), 1)
            prior = PriorConfig(0.4, hist.num_distinct)
            fit = optimal_bins(hist, prior, model)
            freq = dict(hist.entries)
            recomputed = math.fsum(
                bin_log_likelihood([freq[c] for c in range(lo, hi + 1)], model)
                for lo, hi in fit.edges
            ) + log_prior(len(fit.edges), prior)
            assert fit.log_posterior == pytest.approx(recomputed, abs=1e-9)

    def test_tie_resolution_matches_oracle(self):
        # All-ones frequencies with gamma = 0.5 tie two-bin splits against
        # the three-singleton partition exactly; both searches must pick
        # the same representative (earlier split, wider trailing bin).
        hist = CountHistogram(((0, 1), (1, 1), (2, 1)))
        prior = PriorConfig(0.5, 3)
        dp = optimal_bins(hist, prior)
        bf = brute_force_bins(hist, prior)
        assert dp.edges == bf.edges == ((0, 0), (1, 2))

    def test_permutation_invariance(self, rng):
        counts = [0, 0, 1, 5, 5, 9, 9, 9, 14]
        prior_args = dict(gamma=0.3, beta=1)
        spec_a, _ = fit_bins(make_records(counts), **prior_args)
        shuffled = list(counts)
        rng.shuffle(shuffled)
        spec_b, _ = fit_bins(make_records(shuffled), **prior_args)
        assert spec_a.edges == spec_b.edges

    def test_smoothed_candidates_all_finite(self, rng):
        from crowdbins.binning import _last_bin_scores, _prefix_stats

        hist = smooth(random_histogram(rng), 1)
        freqs = np.asarray(hist.frequencies, dtype=np.int64)
        for model in ("multinomial", "poisson"):
            prefix = _prefix_stats(freqs, model)
            for r in range(hist.num_distinct):
                assert np.all(np.isfinite(_last_bin_scores(prefix, r, model)))

    def test_dp_table_backtracks_to_valid_partition(self, rng):
        hist = smooth(random_histogram(rng), 1)
        table = dp_table(hist, PriorConfig(0.5, hist.num_distinct))
        starts = table.backtrack()
        assert starts[0] == 0
        assert all(a < b for a, b in zip(starts, starts[1:]))
        assert all(0 <= s < hist.num_distinct for s in starts)


class TestBruteForce:
    def test_single_entry(self):
        hist = CountHistogram(((4, 9),))
        prior = PriorConfig(0.2, 1)
        assert brute_force_bins(hist, prior) == optimal_bins(hist, prior)

    def test_too_many_distinct_counts(self):
        hist = CountHistogram(tuple((i, 1) for i in range(21)))
        with pytest.raises(ValueError, match="at most 20"):
            brute_force_bins(hist, PriorConfig(0.5, 21))


class TestPartitionLogLikelihood:
    def test_matches_direct_multinomial_sum(self):
        hist = CountHistogram(((0, 4), (1, 2), (2, 6), (3, 1)))
        edges = ((0, 1), (2, 3))
        expected = float(
            stats.multinomial(6, [4 / 6, 2 / 6]).logpmf([4, 2])
            + stats.multinomial(7, [6 / 7, 1 / 7]).logpmf([6, 1])
        )
        assert partition_log_likelihood(hist, edges) == pytest.approx(expected, abs=1e-9)

    def test_counts_above_top_edge_clamp(self):
        hist = CountHistogram(((0, 2), (9, 3)))
        edges = ((0, 4),)
        clamped = CountHistogram(((0, 2), (4, 3)))
        assert partition_log_likelihood(hist, edges) == partition_log_likelihood(clamped, edges)

    def test_reference_probabilities(self):
        hist = CountHistogram(((0, 3), (1, 1)))
        reference = CountHistogram(((0, 5), (1, 5)))
        edges = ((0, 1),)
        expected = float(stats.multinomial(4, [0.5, 0.5]).logpmf([3, 1]))
        assert partition_log_likelihood(hist, edges, reference=reference) == pytest.approx(
            expected, abs=1e-9
        )

    def test_empty_bins_contribute_nothing(self):
        hist = CountHistogram(((0, 3),))
        edges = ((0, 0), (1, 5))
        assert partition_log_likelihood(hist, edges) == 0.0


class TestHeldOutLikelihood:
    COUNTS = [0, 0, 0, 1, 1, 2, 2, 3, 5, 5, 8, 9, 12, 12, 15, 20, 20, 31, 40, 55]

    def test_deterministic(self):
        a = held_out_likelihood(self.COUNTS, 0.25, 0.3, seed=4)
        b = held_out_likelihood(self.COUNTS, 0.25, 0.3, seed=4)
        assert a == b

    def test_seed_changes_split(self):
        values = {held_out_likelihood(self.COUNTS, 0.25, 0.3, seed=s) for s in range(8)}
        assert len(values) > 1

    def test_degenerate_ratio_rejected(self):
        with pytest.raises(ValueError):
            held_out_likelihood(self.COUNTS, 0.001, 0.3, seed=0)
        with pytest.raises(ValueError):
            held_out_likelihood([1, 2], 0.5, 1.5, seed=0)

    def test_single_valued_data_scores_zero(self):
        # Every held-out count lands in one bin with a single distinct
        # value, so the multinomial contribution is the identity.
        assert held_out_likelihood([0] * 12, 0.25, 0.5, seed=1) == 0.0

    def test_train_side_probabilities_supported(self):
        a = held_out_likelihood(self.COUNTS, 0.25, 0.3, seed=4, prob_source="train")
        assert math.isfinite(a)
        with pytest.raises(ValueError):
            held_out_likelihood(self.COUNTS, 0.25, 0.3, seed=4, prob_source="prior")


class TestGammaSelection:
    def test_rank_index_sums_hand_example(self):
        # ratio 0: order 0.2 > 0.3 > 0.1 -> indices (2, 0, 1)
        # ratio 1: order 0.1 > 0.2 > 0.3 -> indices (0, 1, 2)
        table = np.array([[-5.0, -1.0], [-3.0, -2.0], [-4.0, -9.0]])
        assert list(rank_index_sums(table)) == [2, 1, 3]

    def test_rank_ties_keep_grid_order(self):
        table = np.array([[0.0], [0.0], [-1.0]])
        assert list(rank_index_sums(table)) == [0, 1, 2]

    def test_dominant_gamma_wins_with_zero_index_sum(self):
        table = np.array([[-9.0, -9.0, -9.0], [-1.0, -1.0, -1.0], [-5.0, -5.0, -5.0]])
        sums = rank_index_sums(table)
        assert list(sums) == [2 * 3, 0, 1 * 3]

    def test_single_gamma_grid(self, rng):
        counts = rng.integers(0, 12, size=40)
        records = make_records(counts)
        result = grid_search_gamma(records, gammas=[0.35], seeds=range(3))
        assert result.gamma == 0.35
        spec, _ = fit_bins(records, 0.35)
        assert result.bins.edges == spec.edges

    def test_deterministic_rerun(self, rng):
        counts = rng.integers(0, 15, size=60)
        records = make_records(counts)
        kwargs = dict(gammas=(0.2, 0.5, 0.8), ratios=(0.2, 0.25), seeds=range(4))
        a = grid_search_gamma(records, **kwargs)
        b = grid_search_gamma(records, **kwargs)
        assert a.gamma == b.gamma
        assert a.bins.edges == b.bins.edges
        assert np.array_equal(a.mean_likelihoods, b.mean_likelihoods)

    def test_workers_do_not_change_result(self, rng):
        counts = rng.integers(0, 15, size=60)
        records = make_records(counts)
        kwargs = dict(gammas=(0.2, 0.5, 0.8), ratios=(0.2,), seeds=range(4))
        serial = grid_search_gamma(records, **kwargs)
        threaded = grid_search_gamma(records, workers=4, **kwargs)
        assert serial.gamma == threaded.gamma
        assert serial.bins.edges == threaded.bins.edges
        assert np.array_equal(serial.mean_likelihoods, threaded.mean_likelihoods)

    def test_insufficient_data_rejected(self):
        with pytest.raises(ValueError, match="at least 10"):
            grid_search_gamma(make_records([1] * 9))
