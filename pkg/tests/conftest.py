import numpy as np
import pytest

from obstacle_relax import build_grid, example71_data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ex20():
    g = build_grid(20)
    return g, example71_data(g)
