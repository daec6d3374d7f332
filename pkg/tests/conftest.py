import numpy as np
import pytest

from airyrelax.sym2 import Sym2


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def random_sym2(rng, n, scale=1.0):
    return Sym2(*(scale * rng.standard_normal(n) for _ in range(3)))
