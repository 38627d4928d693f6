import numpy as np
import pytest
from hypothesis import settings

from fedsim.config import ExperimentConfig

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    """Cheap config for engine-level tests."""
    return ExperimentConfig(samples_per_client=240, rounds=4)
