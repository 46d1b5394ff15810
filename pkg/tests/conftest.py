import numpy as np
import pytest

from onevision.core import DelaySpec
from onevision.sim import RunConfig


@pytest.fixture(scope="session")
def default_delays():
    return DelaySpec(obs=3, act=4, comm=5, control_interval=5)


@pytest.fixture
def quiet_config():
    """Short noiseless run for exactness checks."""
    return RunConfig(
        task="leader-linear", framework="onevision",
        sensor_noise=0.0, disturbance_noise=0.0, duration_s=3.0, seed=0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
