import numpy as np
import pytest

from ahharmonic.geometry import MetricSpec

TWO_PI = 2 * np.pi


@pytest.fixture
def circle():
    return MetricSpec(1, (TWO_PI,))


@pytest.fixture
def torus2():
    return MetricSpec(2, (TWO_PI, TWO_PI))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
