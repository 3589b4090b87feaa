import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from polyabranch import BaseMeasure, BranchingKernel, Space

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def abc():
    """Three unit atoms, blocks {a, b} and {c}."""
    space = Space.discrete(["a", "b", "c"], ["L", "L", "R"])
    return space, BaseMeasure(space, [1, 1, 1]), BranchingKernel.partition(space)


@pytest.fixture
def four():
    space = Space.discrete(["a", "b", "c", "d"], ["L", "L", "R", "R"])
    return space, BaseMeasure(space, [1, 2, 1, 1]), BranchingKernel.partition(space)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
