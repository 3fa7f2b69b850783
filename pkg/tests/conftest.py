import pytest

from infoclt.density import GridSpec, materialize
from infoclt.families import DistributionSpec, standard_mixture


GRID = GridSpec(points=4096)


def spec(family, **params):
    return DistributionSpec(family=family, params=params)


@pytest.fixture(scope="session")
def grid():
    return GRID


@pytest.fixture(scope="session")
def normal():
    return materialize(spec("normal"), GRID)


@pytest.fixture(scope="session")
def gamma5():
    return materialize(spec("gamma", shape=5), GRID)


@pytest.fixture(scope="session")
def expo():
    return materialize(DistributionSpec(family="exponential", center_and_scale=True), GRID)


@pytest.fixture(scope="session")
def uniform():
    return materialize(spec("uniform"), GRID)


@pytest.fixture(scope="session")
def mixture():
    return materialize(standard_mixture(), GRID)
