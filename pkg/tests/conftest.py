import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lipaug import SmoothNet


def random_net(rng, dims=None, scale=0.6, activation="tanh"):
    """Random net with modest weight scale so traces stay well-conditioned."""
    if dims is None:
        dims = [3, 5, 4, 2]
    ws = [
        scale * rng.standard_normal((dims[k + 1], dims[k]))
        for k in range(len(dims) - 1)
    ]
    return SmoothNet(ws, activation)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_net(rng):
    return random_net(rng)
