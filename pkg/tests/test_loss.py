import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowdbins.data import BinSpec
from crowdbins.loss import (
    LossConfig,
    batch_bin_loss,
    bin_loss,
    combined_loss,
    lambda_grid,
    per_record_bin_losses,
)

from conftest import make_predictions


class TestBinLoss:
    def test_zero_when_prediction_is_exact(self, three_bins):
        assert bin_loss(45, 45.0, three_bins) == 0.0

    def test_log_branch_inside_bin(self, three_bins):
        # Ground truth 45 lives in [25, 67]; a prediction of 48 stays
        # inside, so the penalty is ln(1 + 3) = ln 4.
        assert bin_loss(45, 48.0, three_bins) == pytest.approx(math.log(4), abs=1e-12)

    def test_linear_branch_outside_bin(self, three_bins):
        assert bin_loss(45, 100.0, three_bins) == 55.0

    def test_linear_branch_carries_no_lambda1(self, three_bins):
        cfg = LossConfig(lambda1=10.0)
        assert bin_loss(45, 100.0, three_bins, cfg) == 55.0
        assert bin_loss(45, 48.0, three_bins, cfg) == pytest.approx(10 * math.log(4), abs=1e-12)

    def test_inclusive_bin_endpoints(self, three_bins):
        assert bin_loss(45, 25.0, three_bins) == pytest.approx(math.log(21), abs=1e-12)
        assert bin_loss(45, 67.0, three_bins) == pytest.approx(math.log(23), abs=1e-12)

    def test_discontinuity_at_bin_edge(self, three_bins):
        inside = bin_loss(45, 67.0, three_bins)
        just_outside = bin_loss(45, 67.0 + 1e-9, three_bins)
        assert just_outside == pytest.approx(22.0, abs=1e-6)
        assert just_outside - inside > 18

    def test_fractional_predictions(self, three_bins):
        assert bin_loss(45, 44.5, three_bins) == pytest.approx(math.log(1.5), abs=1e-12)

    @given(
        st.integers(min_value=0, max_value=120),
        st.floats(min_value=0, max_value=150, allow_nan=False),
    )
    def test_bounded_by_absolute_error(self, count, predicted):
        bins = BinSpec(edges=((0, 24), (25, 67), (68, 120)), gamma=0.5, alpha=3, beta=1)
        value = bin_loss(count, predicted, bins)
        err = abs(count - predicted)
        assert 0.0 <= value <= err + 1e-12
        assert (value == 0.0) == (err == 0.0)

    def test_clamped_counts_use_last_bin(self, three_bins):
        # 150 clamps into [68, 100]; a prediction of 90 is inside it.
        assert bin_loss(150, 90.0, three_bins) == pytest.approx(math.log(61), abs=1e-12)


class TestCombinedLoss:
    def test_lambda2_zero_is_identity(self, three_bins):
        assert combined_loss(2.5, 45, 100.0, three_bins, LossConfig(lambda2=0.0)) == 2.5

    def test_additive(self, three_bins):
        # model loss 2.5 plus a bin term of 1.5 at lambda2 = 1.
        value = combined_loss(2.5, 45, 45 + (math.exp(1.5) - 1), three_bins)
        assert value == pytest.approx(4.0, abs=1e-12)

    def test_small_lambda2_scales_linear_branch(self, three_bins):
        value = combined_loss(1.0, 45, 100.0, three_bins, LossConfig(lambda2=0.01))
        assert value == pytest.approx(1.0 + 0.55, abs=1e-12)

    def test_non_finite_model_loss_rejected(self, three_bins):
        with pytest.raises(ValueError):
            combined_loss(float("nan"), 45, 45.0, three_bins)


class TestBatchReduction:
    def test_mean_and_sum(self, three_bins):
        records = make_predictions([(45, 45.0), (45, 100.0)])
        assert batch_bin_loss(records, three_bins, reduction="sum") == 55.0
        assert batch_bin_loss(records, three_bins, reduction="mean") == 27.5

    def test_per_record_values(self, three_bins):
        records = make_predictions([(45, 48.0), (45, 100.0)])
        values = per_record_bin_losses(records, three_bins)
        assert values == pytest.approx([math.log(4), 55.0], abs=1e-12)

    def test_empty_batch_rejected(self, three_bins):
        with pytest.raises(ValueError):
            batch_bin_loss([], three_bins)

    def test_unknown_reduction_rejected(self, three_bins):
        with pytest.raises(ValueError):
            batch_bin_loss(make_predictions([(1, 1.0)]), three_bins, reduction="max")


class TestLambdaGrid:
    def test_table_layout_and_values(self, three_bins):
        records = make_predictions([(45, 48.0), (45, 100.0), (10, 10.0)])
        model_losses = [0.5, 0.25, 0.0]
        table = lambda_grid(records, three_bins, model_losses, lambda1s=(1.0, 10.0), lambda2s=(0.01, 1.0))
        assert table.shape == (2, 2)
        kernel_l1 = [math.log(4), 55.0, 0.0]
        expected = np.mean([m + 1.0 * k for m, k in zip(model_losses, kernel_l1)])
        assert table[0, 1] == pytest.approx(expected, abs=1e-12)
        # lambda1 only scales the logarithmic branch.
        kernel_l10 = [10 * math.log(4), 55.0, 0.0]
        expected10 = np.mean([m + 0.01 * k for m, k in zip(model_losses, kernel_l10)])
        assert table[1, 0] == pytest.approx(expected10, abs=1e-12)

    def test_misaligned_losses_rejected(self, three_bins):
        with pytest.raises(ValueError):
            lambda_grid(make_predictions([(1, 1.0)]), three_bins, [0.1, 0.2])


class TestLossConfig:
    def test_defaults(self):
        cfg = LossConfig()
        assert cfg.lambda1 == 1.0
        assert cfg.lambda2 == 1.0

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(lambda1=-1)
        with pytest.raises(ValueError):
            LossConfig(lambda2=-0.5)
