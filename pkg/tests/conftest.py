import numpy as np
import pytest

from occudet.simulator import sample_params, simulate_dataset


@pytest.fixture(scope="session")
def small_synthetic():
    """A 2-species dataset used by several engine tests."""
    params = sample_params((2, 2, 2), seed=11, gamma_sd=1.0)
    sim = simulate_dataset(params, n_sites=60, visit_law=(3.0, 0.0), seed=11)
    return sim


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
