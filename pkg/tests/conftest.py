import pytest
from hypothesis import HealthCheck, settings

from fbmweak.kernel import TimeGrid

settings.register_profile("fbmweak", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fbmweak")


@pytest.fixture
def grid16():
    return TimeGrid(1.0, 16)


@pytest.fixture
def grid64():
    return TimeGrid(1.0, 64)
