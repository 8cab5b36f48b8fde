"""Trial environment: observations and the single-residual grasp trial."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from ..dataset import GraspRecord
from ..sim import N_ARM, N_HAND, HandModel, ObjectShape, Pose2, SimParams, WorldState
from ..sim.hand import DEFAULT_A, DEFAULT_S, forward_kinematics, sample_robot_pose
from ..sim.physics import drop_test_full
from ..sim.trial import place

OBS_DIM_DIFFUSION = 25
OBS_DIM_RL = OBS_DIM_DIFFUSION + N_HAND

# The simulated hand has slimmer phalanges than the hand the seed grasps were
# planned with, so dataset targets under-grip slightly until corrected.
ENV_PHALANX_RADIUS = 0.008


def build_observation(
    joints,
    object_pose: Pose2,
    initial_object_pos,
    hand: HandModel,
    record: GraspRecord | None = None,
    mode: str = "rl",
) -> np.ndarray:
    """Joint angles, object pose in the hand-base frame, positions, fingertips[, targets]."""
    if mode not in ("rl", "diffusion"):
        raise ValueError(f"mode must be 'rl' or 'diffusion', got {mode!r}")
    if mode == "rl" and record is None:
        raise ValueError("rl observations need the dataset record")
    kin = forward_kinematics(hand, joints)
    rel = kin.hand_base.inverse().compose(object_pose)
    parts = [
        np.asarray(joints, dtype=float),
        [rel.x, rel.y, np.cos(rel.theta), np.sin(rel.theta)],
        np.asarray(initial_object_pos, dtype=float),
        [object_pose.x, object_pose.y],
        [kin.hand_base.x, kin.hand_base.y],
        kin.fingertips.ravel(),
    ]
    if mode == "rl":
        parts.append(record.targets)
    obs = np.concatenate([np.asarray(p, dtype=float) for p in parts])
    if not np.all(np.isfinite(obs)):
        raise FloatingPointError("non-finite observation")
    return obs


def observation_from_world(world: WorldState, hand: HandModel, record=None, mode: str = "rl") -> np.ndarray:
    init = world.extras.get("initial_object_pos", (world.object_pose.x, world.object_pose.y))
    return build_observation(world.joints, world.object_pose, init, hand, record, mode)


@dataclass(frozen=True)
class EnvConfig:
    hand: HandModel = field(default_factory=lambda: HandModel(phalanx_radius=ENV_PHALANX_RADIUS))
    params: SimParams = field(default_factory=SimParams)
    arm_s: tuple[float, float, float] = DEFAULT_S
    arm_a: tuple[float, float, float] = DEFAULT_A
    r_max: float = 0.15


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: int
    next_obs: np.ndarray
    done: bool = True
    aborted: bool = False


def arm_pose(env: EnvConfig, pose_mode: str, rng: np.random.Generator | None) -> np.ndarray:
    if pose_mode == "static":
        return np.asarray(env.arm_s, dtype=float)
    if pose_mode == "random":
        if rng is None:
            raise ValueError("random pose mode needs an rng")
        return sample_robot_pose(env.hand, rng, env.arm_s, env.arm_a)[:N_ARM]
    raise ValueError(f"pose_mode must be 'static' or 'random', got {pose_mode!r}")


def clamp_residual(residual, r_max: float) -> np.ndarray:
    r = np.zeros(N_HAND) if residual is None else np.asarray(residual, dtype=float)
    if r.shape != (N_HAND,):
        raise ValueError(f"residual must have {N_HAND} entries, got shape {r.shape}")
    return np.clip(r, -r_max, r_max)


def run_grasp_trial(
    env: EnvConfig,
    record: GraspRecord,
    shape: ObjectShape,
    pose_mode: str = "static",
    residual_policy: Callable[[np.ndarray], np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
) -> Transition:
    """Robot pose, placement, drive to targets, residual, gravity on, drop test."""
    hand = env.hand
    arm = arm_pose(env, pose_mode, rng)
    pl = place(hand, arm, record.rel_pose, shape, env.params.contact_eps)
    init = (pl.object_pose.x, pl.object_pose.y)
    q = pl.joints.copy()
    q[N_ARM:] = record.targets
    q = hand.clamp(q)
    obs = build_observation(q, pl.object_pose, init, hand, record, "rl")
    residual = clamp_residual(None if residual_policy is None else residual_policy(obs), env.r_max)
    if pl.collided:
        return Transition(obs, residual, -1, obs, True, True)
    q[N_ARM:] += residual
    q = hand.clamp(q)
    drop = drop_test_full(WorldState(q, pl.object_pose, shape), hand, 0.0, env.params)
    next_obs = build_observation(q, drop.final_pose, init, hand, record, "rl")
    return Transition(obs, residual, drop.reward, next_obs, True, False)
