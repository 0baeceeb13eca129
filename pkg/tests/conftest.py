import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dronebev.simworld import preset, simulate

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_simple():
    """Short simple-preset sequence shared by integration tests."""
    return simulate(preset("simple", frame_count=12, rng_seed=3))


@pytest.fixture(scope="session")
def small_complex():
    return simulate(preset("complex", frame_count=6, rng_seed=5))
