import math

import numpy as np
import pytest
from hypothesis import settings

from graspforge.dataset import SeedConfig, close_fingers, nominal_rel_pose
from graspforge.sim import DEFAULT_S, HandModel, SimParams, shape_library
from graspforge.sim.trial import place

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture(scope="session")
def hand():
    return HandModel()


@pytest.fixture(scope="session")
def params():
    return SimParams()


@pytest.fixture(scope="session")
def shapes():
    return shape_library()


def closed_grasp(hand, shape):
    """Nominal placement at the static pose with all three fingers closed onto the object."""
    rel = nominal_rel_pose(shape, SeedConfig())
    pl = place(hand, DEFAULT_S, rel, shape)
    q = close_fingers(hand, pl.joints, pl.object_pose, shape)
    return q, pl.object_pose, pl.joints


def rng(seed=0):
    return np.random.default_rng(seed)


TILTS = tuple(math.radians(d) for d in (-25.0, 0.0, 25.0))
