from .geometry import Pose2, compose, invert, wrap_angle
from .hand import (
    DEFAULT_A,
    DEFAULT_S,
    N_ARM,
    N_HAND,
    N_JOINTS,
    HandModel,
    collide,
    forward_kinematics,
    place_object_relative,
    sample_robot_pose,
    static_robot_pose,
)
from .physics import (
    Contact,
    SimParams,
    SimulationDiverged,
    WorldState,
    drop_reward,
    drop_test,
    drop_test_full,
    find_contacts,
    gravity_vector,
    step_contacts,
)
from .shapes import SHAPE_IDS, ObjectShape, get_shape, load_shape, shape_library
from .closure import check_force_closure
from .trial import replay

__all__ = [
    "DEFAULT_A",
    "DEFAULT_S",
    "N_ARM",
    "N_HAND",
    "N_JOINTS",
    "SHAPE_IDS",
    "Contact",
    "HandModel",
    "ObjectShape",
    "Pose2",
    "SimParams",
    "SimulationDiverged",
    "WorldState",
    "check_force_closure",
    "collide",
    "compose",
    "drop_reward",
    "drop_test",
    "drop_test_full",
    "find_contacts",
    "forward_kinematics",
    "get_shape",
    "gravity_vector",
    "invert",
    "load_shape",
    "place_object_relative",
    "replay",
    "sample_robot_pose",
    "shape_library",
    "static_robot_pose",
    "step_contacts",
    "wrap_angle",
]
