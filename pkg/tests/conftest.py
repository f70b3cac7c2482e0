import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from flowlab import geometry as G


@pytest.fixture(scope="session")
def models():
    return G.standard_models()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pair_at_distance(M, rng, d):
    x = G.random_point(M, rng)
    v = G.random_tangent(M, x, rng)
    return np.asarray(x, float), np.asarray(G.exp_map(M, x, v, d), float)
