import numpy as np
import pytest

from core.regression import Dataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow Monte Carlo tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def tiny_dataset():
    """Intercept-only sample y = (0, 2, 1), small enough to work out by hand"""
    return Dataset.from_regressors([0.0, 2.0, 1.0])


@pytest.fixture
def null_regression(rng):
    """T = 120 observations of y = 1 + 0.5 x + u, no break"""
    T = 120
    x = rng.standard_normal(T)
    y = 1.0 + 0.5 * x + rng.standard_normal(T)
    return Dataset.from_regressors(y, x)


@pytest.fixture
def mean_shift(rng):
    """Intercept-only sample of length 100 with a mean shift of 2 at t = 71"""
    y = rng.standard_normal(100)
    y[70:] += 2.0
    return Dataset.from_regressors(y)
