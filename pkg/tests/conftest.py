import numpy as np
import pytest

from asysqn.data import Dataset, synthetic_classification, vertical_split


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_dataset():
    """Small strongly convex problem used across modules."""
    return synthetic_classification(60, 8, seed=17)


@pytest.fixture
def toy_shards(toy_dataset):
    return vertical_split(toy_dataset, 4)


@pytest.fixture
def tiny_dataset():
    """Hand-auditable 4x3 dataset."""
    X = np.array(
        [
            [1.0, 0.0, 2.0],
            [0.0, 1.0, -1.0],
            [0.5, 0.5, 0.0],
            [-1.0, 2.0, 1.0],
        ]
    )
    y = np.array([1.0, -1.0, 1.0, -1.0])
    return Dataset(features=X, labels=y)
