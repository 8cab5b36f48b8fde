"""Grasp replay timeline shared by pre-selection, RL trials and policy rollouts.

Timeline: set the robot pose with the hand open, place the object from its
hand-relative pose under zero gravity, drive the hand joints to their targets
(the object stays where it was placed until gravity is enabled), then run the
drop test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose2
from .hand import N_ARM, HandModel, collide, forward_kinematics, place_object_relative
from .physics import DropResult, SimParams, WorldState, drop_test_full


@dataclass(frozen=True)
class Placement:
    joints: np.ndarray  # arm pose + open hand
    object_pose: Pose2
    collided: bool


def place(hand: HandModel, arm_joints, rel_pose: Pose2, shape, eps: float = 1e-4) -> Placement:
    q = np.empty(len(hand.limits))
    q[:N_ARM] = arm_joints
    q[N_ARM:] = hand.open_pose
    base = forward_kinematics(hand, q).hand_base
    pose = place_object_relative(base, rel_pose)
    return Placement(q, pose, collide(hand, q, pose, shape, eps))


@dataclass(frozen=True)
class ReplayResult:
    reward: int
    aborted: bool
    joints: np.ndarray  # final commanded configuration
    object_pose: Pose2  # pose at gravity-on
    drop: DropResult | None


def replay(
    hand: HandModel,
    params: SimParams,
    arm_joints,
    rel_pose: Pose2,
    hand_targets,
    shape,
    tilt: float = 0.0,
) -> ReplayResult:
    """Run the full timeline; a collision at placement aborts with reward -1."""
    pl = place(hand, arm_joints, rel_pose, shape, params.contact_eps)
    q = pl.joints.copy()
    q[N_ARM:] = hand_targets
    q = hand.clamp(q)
    if pl.collided:
        return ReplayResult(-1, True, q, pl.object_pose, None)
    drop = drop_test_full(WorldState(q, pl.object_pose, shape), hand, tilt, params)
    return ReplayResult(drop.reward, False, q, pl.object_pose, drop)
