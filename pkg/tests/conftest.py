import numpy as np
import pytest

from stochheat import BoxDomain, FiltrationTree, NoiseCoefficient, TimeWindow, build_basis


@pytest.fixture
def pi_domain():
    return BoxDomain((np.pi,))


@pytest.fixture
def basis4(pi_domain):
    return build_basis(pi_domain, 4)


@pytest.fixture
def tree5():
    return FiltrationTree(5, 1.0)


@pytest.fixture
def full_window():
    return TimeWindow.full(1.0)


def random_noise(rng, steps, amax=2.0):
    return NoiseCoefficient(rng.uniform(-amax, amax, steps))
