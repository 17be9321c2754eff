import numpy as np
import pytest

from pacing_dyn.engine import MarketConfig, simulate


@pytest.fixture(scope="session")
def band_trace():
    """n=2 equal-budget first-price self-play, eta=4e-5, six million rounds."""
    return simulate(MarketConfig.self_play((0.5, 0.5), 4e-5, 6_000_000))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
