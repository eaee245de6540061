import numpy as np
import pytest

from rbmlab.sampling import make_rng


@pytest.fixture
def rng():
    return make_rng(20240611)


def random_distribution(rng, n, alpha=1.0):
    return rng.dirichlet(np.full(1 << n, alpha))
