import numpy as np
import pytest

from rfdescent.dataio import Dataset, dataset_available, load_dataset
from rfdescent.forest import ForestConfig, train_rf
from rfdescent.tree import GrowConfig


def make_blobs(n=200, d=4, C=2, seed=0, noise=1.0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, C, n)
    centers = rng.normal(0, 2, size=(C, d))
    X = centers[labels] + rng.normal(0, noise, size=(n, d))
    return Dataset.from_arrays(X, labels, C, name="blobs")


@pytest.fixture
def blobs():
    return make_blobs()


@pytest.fixture
def small_forest(blobs):
    cfg = ForestConfig(M=5, grow=GrowConfig(max_leaf_nodes=16), seed=3)
    return train_rf(blobs, np.arange(blobs.N), cfg)


@pytest.fixture(scope="session")
def magic():
    if not dataset_available("magic"):
        pytest.fail("bundled magic dataset missing from data/")
    return load_dataset("magic")


# One line per acceptance criterion, filled by test_acceptance and printed at the end.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
