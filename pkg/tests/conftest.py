import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
# broader search for local runs: pytest --hypothesis-profile=stress
settings.register_profile("stress", parent=settings.get_profile("default"), max_examples=400)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
