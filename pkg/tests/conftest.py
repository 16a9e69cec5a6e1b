import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def scene():
    from autocalib.synth import SceneSpec, generate_scene

    return generate_scene(SceneSpec(seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
