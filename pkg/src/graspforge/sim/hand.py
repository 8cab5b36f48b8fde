"""Planar arm + three-finger hand: kinematics, pose randomization, collision query.

Joint vector layout (9 angles): arm joints 0..2, then for each finger f the
proximal and distal joints at 3 + 2f and 4 + 2f. Finger 0 and finger 2 hang
from the palm edges and curl inwards; finger 1 (the "middle" finger) is tucked
along the palm and swings down onto the object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2, point_in_convex, segment_polygon_distance

N_ARM = 3
N_HAND = 6
N_JOINTS = N_ARM + N_HAND

# Randomized-joint defaults (arm only). Static pose is S itself.
DEFAULT_S = (0.0, -math.pi / 2, math.pi / 4)
DEFAULT_A = (math.pi / 2, math.pi / 12, math.pi / 12)


@dataclass(frozen=True)
class HandModel:
    arm_link_lengths: tuple[float, float, float] = (0.5, 0.4, 0.12)
    palm_half_width: float = 0.06
    finger_attach_offsets: tuple[float, float, float] = (-0.05, -0.02, 0.05)
    phalanx_lengths: tuple[tuple[float, float], ...] = ((0.045, 0.035), (0.03, 0.025), (0.045, 0.035))
    phalanx_radius: float = 0.01
    joint_limits: tuple[tuple[float, float], ...] = (
        (-math.pi, math.pi),
        (-math.pi, math.pi),
        (-math.pi, math.pi),
        (-0.3, 1.5),
        (0.0, 1.6),
        (-0.2, 1.8),
        (0.0, 1.6),
        (-0.3, 1.5),
        (0.0, 1.6),
    )
    # direction of each finger at zero flexion (hand frame) and its curl direction
    finger_base_angles: tuple[float, float, float] = (-math.pi / 2, -0.35, -math.pi / 2)
    flex_signs: tuple[float, float, float] = (1.0, -1.0, -1.0)
    open_pose: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    limits: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lims = np.asarray(self.joint_limits, dtype=float)
        if lims.shape != (N_JOINTS, 2):
            raise ValueError(f"joint_limits must be {N_JOINTS} (lo, hi) pairs")
        if np.any(lims[:, 0] >= lims[:, 1]):
            raise ValueError("joint limits need lo < hi")
        lengths = list(self.arm_link_lengths) + [v for p in self.phalanx_lengths for v in p]
        if min(lengths) <= 0 or self.palm_half_width <= 0 or self.phalanx_radius <= 0:
            raise ValueError("all lengths must be positive")
        if len(self.phalanx_lengths) != 3 or len(self.finger_attach_offsets) != 3:
            raise ValueError("the hand has exactly three fingers")
        lims.setflags(write=False)
        object.__setattr__(self, "limits", lims)

    @property
    def hand_limits(self) -> np.ndarray:
        return self.limits[N_ARM:]

    def clamp(self, joints: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(joints, dtype=float), self.limits[:, 0], self.limits[:, 1])

    def within_limits(self, joints: np.ndarray, tol: float = 1e-12) -> bool:
        q = np.asarray(joints, dtype=float)
        return bool(np.all(q >= self.limits[:, 0] - tol) and np.all(q <= self.limits[:, 1] + tol))

    def with_radius(self, radius: float) -> HandModel:
        from dataclasses import replace

        return replace(self, phalanx_radius=radius)


@dataclass(frozen=True)
class Kinematics:
    """World-frame geometry of one hand configuration."""

    link_frames: list[Pose2]  # 3 arm links (start point, link heading)
    phalanx_frames: list[Pose2]  # 6 phalanges in finger order
    hand_base: Pose2  # palm centre, heading of the last arm link
    palm_center: np.ndarray
    palm_normal: np.ndarray
    palm_segment: np.ndarray  # (2, 2)
    fingertips: np.ndarray  # (3, 2)
    capsules: np.ndarray  # (7, 4): palm, then phalanges as (x0, y0, x1, y1)


def forward_kinematics(hand: HandModel, joints: np.ndarray) -> Kinematics:
    q = np.asarray(joints, dtype=float)
    if q.shape != (N_JOINTS,):
        raise ValueError(f"expected {N_JOINTS} joint angles, got shape {q.shape}")
    x = y = phi = 0.0
    link_frames = []
    for k in range(N_ARM):
        phi += q[k]
        link_frames.append(Pose2(x, y, phi))
        x += hand.arm_link_lengths[k] * math.cos(phi)
        y += hand.arm_link_lengths[k] * math.sin(phi)
    base = Pose2(x, y, phi)
    c, s = math.cos(phi), math.sin(phi)
    center = np.array([x, y])
    normal = np.array([s, -c])
    hw = hand.palm_half_width
    palm = np.array([[x - c * hw, y - s * hw], [x + c * hw, y + s * hw]])

    caps = [palm.ravel()]
    frames = []
    tips = []
    for f in range(3):
        off = hand.finger_attach_offsets[f]
        px, py = x + c * off, y + s * off
        ang = phi + hand.finger_base_angles[f]
        for j in range(2):
            ang += hand.flex_signs[f] * q[N_ARM + 2 * f + j]
            frames.append(Pose2(px, py, ang))
            length = hand.phalanx_lengths[f][j]
            nx, ny = px + length * math.cos(ang), py + length * math.sin(ang)
            caps.append(np.array([px, py, nx, ny]))
            px, py = nx, ny
        tips.append((px, py))
    return Kinematics(
        link_frames=link_frames,
        phalanx_frames=frames,
        hand_base=base,
        palm_center=center,
        palm_normal=normal,
        palm_segment=palm,
        fingertips=np.array(tips),
        capsules=np.array(caps),
    )


def robot_pose_from_weights(s, a, w) -> np.ndarray:
    s, a, w = (np.asarray(v, dtype=float) for v in (s, a, w))
    return s + w * a


def sample_robot_pose(
    hand: HandModel,
    rng: np.random.Generator,
    s=DEFAULT_S,
    a=DEFAULT_A,
    hand_joints=None,
) -> np.ndarray:
    """Arm joints R_i = S_i + w_i * A_i with w_i ~ U[-1, 1]; hand joints fixed."""
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    if s.shape != a.shape or len(s) != N_ARM:
        raise ValueError(f"S and A must both have {N_ARM} entries")
    lo, hi = hand.limits[:N_ARM, 0], hand.limits[:N_ARM, 1]
    if np.any(s - np.abs(a) < lo) or np.any(s + np.abs(a) > hi):
        raise ValueError("randomized joint range S +- A leaves the joint limits")
    w = rng.uniform(-1.0, 1.0, size=N_ARM)
    q = np.empty(N_JOINTS)
    q[:N_ARM] = robot_pose_from_weights(s, a, w)
    q[N_ARM:] = hand.open_pose if hand_joints is None else hand_joints
    return q


def static_robot_pose(hand: HandModel, s=DEFAULT_S, hand_joints=None) -> np.ndarray:
    q = np.empty(N_JOINTS)
    q[:N_ARM] = s
    q[N_ARM:] = hand.open_pose if hand_joints is None else hand_joints
    return q


def place_object_relative(hand_base: Pose2, rel_pose: Pose2) -> Pose2:
    """World pose of an object given its pose in the hand-base frame."""
    return hand_base.compose(rel_pose)


def collide(hand: HandModel, joints: np.ndarray, object_pose: Pose2, shape, eps: float = 1e-4) -> bool:
    """True iff the palm or a phalanx penetrates the object by more than `eps`."""
    kin = forward_kinematics(hand, joints)
    poly = object_pose.apply(shape.points)
    limit = hand.phalanx_radius - eps
    reach = shape.circumradius + hand.phalanx_radius
    centre = np.array([object_pose.x, object_pose.y])
    for cap in kin.capsules:
        a, b = cap[:2], cap[2:]
        # cheap reject before the exact distance
        if _point_seg(centre, a, b) > reach:
            continue
        if point_in_convex(a, poly) or segment_polygon_distance(a, b, poly) < limit:
            return True
    return False


def _point_seg(p, a, b) -> float:
    ab = b - a
    t = min(max(float((p - a) @ ab) / float(ab @ ab), 0.0), 1.0)
    return float(math.hypot(*(a + t * ab - p)))
