import numpy as np
import pytest

from curvelab import metric as M
from curvelab import spaces as S
from curvelab.semigroup import decompose


def build(text):
    return S.build(S.SpaceSpec.parse(text))


@pytest.fixture(scope="session")
def two_point():
    return S.two_point()


@pytest.fixture(scope="session")
def two_point_dec(two_point):
    return decompose(two_point)


@pytest.fixture(scope="session")
def two_point_dE():
    return M.MetricMatrix(np.array([[0.0, np.sqrt(2.0)], [np.sqrt(2.0), 0.0]]))


@pytest.fixture(scope="session")
def ou100():
    return S.build(S.ou_spec(100))


@pytest.fixture(scope="session")
def ou200():
    return S.build(S.ou_spec(200))


@pytest.fixture(scope="session")
def ou400():
    return S.build(S.ou_spec(400))


@pytest.fixture(scope="session")
def ou200_setup(ou200):
    return ou200, decompose(ou200), M.MetricMatrix.from_triple_coords(ou200)


def random_graphs(count=20, n_max=12, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        n = int(rng.integers(3, n_max + 1))
        out.append(S.random_graph(n, p=0.5, seed=seed * 1000 + k))
    return out


@pytest.fixture(scope="session")
def graphs():
    return random_graphs()
