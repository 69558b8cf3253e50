import numpy as np
import pytest

from crowdbins.data import BinSpec, CountRecord, PredictionRecord


@pytest.fixture
def two_bins() -> BinSpec:
    return BinSpec(edges=((0, 10), (11, 50)), gamma=0.5, alpha=2, beta=1)


@pytest.fixture
def three_bins() -> BinSpec:
    # Matches the in-bin loss walkthrough: ground truth 45 sits in [25, 67].
    return BinSpec(edges=((0, 24), (25, 67), (68, 100)), gamma=0.5, alpha=3, beta=1)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


def make_records(counts) -> list[CountRecord]:
    return [CountRecord(f"img{i:05d}", int(c)) for i, c in enumerate(counts)]


def make_predictions(pairs) -> list[PredictionRecord]:
    return [PredictionRecord(f"img{i:05d}", int(gt), float(pred)) for i, (gt, pred) in enumerate(pairs)]
