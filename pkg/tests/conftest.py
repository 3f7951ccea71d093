import pytest
from hypothesis import HealthCheck, settings

from horizon.geometry import Domain
from horizon.maps import HenonMap, decoupled_model

settings.register_profile("horizon", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("horizon")


@pytest.fixture(scope="session")
def henon():
    return HenonMap.quadratic(0.0, 0.5)


@pytest.fixture(scope="session")
def g():
    return decoupled_model()


@pytest.fixture(scope="session")
def bidisc():
    return Domain.bidisc(2.0)
