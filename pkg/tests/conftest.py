import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def interval():
    from mvreflect.geometry import MovingInterval
    return MovingInterval(radius=1.0, amplitude=0.25, horizon=1.0)


@pytest.fixture
def disk():
    from mvreflect.geometry import MovingDisk
    return MovingDisk(radius=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
