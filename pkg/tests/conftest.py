import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def micro_target():
    from resnet_synth.compiler1d import PiecewiseConstant1D
    return PiecewiseConstant1D([0.0, 1.0], [1.0])


@pytest.fixture
def standard_target():
    """Three cells with mixed signs; the reference target for mutation tests."""
    from resnet_synth.compiler1d import PiecewiseConstant1D
    return PiecewiseConstant1D([-1.0, 0.0, 0.5, 1.5], [1.0, -0.5, 0.75])
