import pytest

from minkground import compute_thresholds, power_family, sine_family


@pytest.fixture(scope="session")
def power13():
    return power_family(1.0, 3.0)


@pytest.fixture(scope="session")
def power13_th(power13):
    return compute_thresholds(power13, 3)


@pytest.fixture(scope="session")
def sine1():
    return sine_family(1.0)


@pytest.fixture(scope="session")
def sine1_th(sine1):
    return compute_thresholds(sine1, 2)
