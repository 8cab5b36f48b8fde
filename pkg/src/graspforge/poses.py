"""Object-pose sampling for policy validation.

Per-dimension quartile statistics of the retained grasps give uniform sampling
bounds; distance and edge-angle gates measured on the same grasps reject
implausible draws, and a collision check rejects interpenetrating ones.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .sim import HandModel, ObjectShape, Pose2, collide, forward_kinematics
from .sim.geometry import segment_polygon_distance
from .sim.hand import place_object_relative

POSE_DIMS = ("x", "y", "theta")
MIDDLE_FINGER_PROXIMAL = 3  # capsule index: palm, f0 prox, f0 dist, f1 prox


@dataclass(frozen=True)
class DimStats:
    n: int
    q1: float
    q3: float
    iqr: float
    lower: float  # whisker L
    upper: float  # whisker U


def quartile_stats(samples) -> DimStats:
    x = np.sort(np.asarray(samples, dtype=float))
    if len(x) < 4:
        raise ValueError(f"need >= 4 samples for quartiles, got {len(x)}")
    q1, q3 = np.quantile(x, [0.25, 0.75], method="linear")
    iqr = q3 - q1
    return DimStats(len(x), float(q1), float(q3), float(iqr), float(q1 - 1.5 * iqr), float(q3 + 1.5 * iqr))


@dataclass(frozen=True)
class PoseMetrics:
    dist_palm_center: float
    dist_finger_center: float
    min_dist_palm: float
    min_dist_finger: float
    edge_angles: tuple[float, float] | None = None


def pose_metrics(hand: HandModel, joints, object_pose: Pose2, shape: ObjectShape) -> PoseMetrics:
    kin = forward_kinematics(hand, joints)
    centroid = np.array([object_pose.x, object_pose.y])
    poly = object_pose.apply(shape.points)
    palm = kin.capsules[0]
    finger = kin.capsules[MIDDLE_FINGER_PROXIMAL]
    finger_mid = 0.5 * (finger[:2] + finger[2:])
    angles = None
    if shape.elongated:
        e0, e1 = (object_pose.apply(v[None, :])[0] for v in shape.edge_vertices())
        angles = tuple(_angle(kin.palm_normal, e - kin.palm_center) for e in (e0, e1))
    return PoseMetrics(
        float(np.hypot(*(centroid - kin.palm_center))),
        float(np.hypot(*(centroid - finger_mid))),
        segment_polygon_distance(palm[:2], palm[2:], poly),
        segment_polygon_distance(finger[:2], finger[2:], poly),
        angles,
    )


def _angle(n, v) -> float:
    norm = float(np.hypot(*v))
    if norm == 0.0:
        return math.pi / 2
    return float(math.acos(max(-1.0, min(1.0, float(n @ v) / norm))))


@dataclass(frozen=True)
class PoseStats:
    object_id: str
    dims: dict[str, DimStats]
    dist_palm_center: DimStats
    dist_finger_center: DimStats
    min_dist_palm: DimStats
    min_dist_finger: DimStats
    edge_angles: DimStats | None


def collect_pose_stats(records, shape: ObjectShape, hand: HandModel | None = None) -> PoseStats:
    """Statistics of relative poses and pose metrics over one object's records."""
    hand = hand or HandModel()
    records = [r for r in records if r.object_id == shape.id]
    if len(records) < 4:
        raise ValueError(f"{shape.id}: need >= 4 records for pose statistics, got {len(records)}")
    rel = np.array([[r.rel_pose.x, r.rel_pose.y, r.rel_pose.theta] for r in records])
    q = np.zeros(len(hand.limits))
    q[3:] = hand.open_pose
    base = forward_kinematics(hand, q).hand_base
    ms = [pose_metrics(hand, q, place_object_relative(base, r.rel_pose), shape) for r in records]
    edge = None
    if shape.elongated:
        edge = quartile_stats([a for m in ms for a in m.edge_angles])
    return PoseStats(
        shape.id,
        {d: quartile_stats(rel[:, i]) for i, d in enumerate(POSE_DIMS)},
        quartile_stats([m.dist_palm_center for m in ms]),
        quartile_stats([m.dist_finger_center for m in ms]),
        quartile_stats([m.min_dist_palm for m in ms]),
        quartile_stats([m.min_dist_finger for m in ms]),
        edge,
    )


@dataclass(frozen=True)
class SamplingBounds:
    a: tuple[float, float, float]
    b: tuple[float, float, float]
    d_max_palm: float = math.inf
    d_max_finger: float = math.inf
    d_min_palm: float = 0.0
    d_min_finger: float = 0.0
    theta_min: float | None = None
    theta_max: float | None = None

    def __post_init__(self):
        if any(lo > hi for lo, hi in zip(self.a, self.b)):
            raise ValueError(f"need a <= b per dimension, got a={self.a} b={self.b}")


def dim_bounds(s: DimStats) -> tuple[float, float]:
    return (s.q1 + s.lower) / 2.0, (s.q3 + s.upper) / 2.0


def sampling_bounds(stats: PoseStats) -> SamplingBounds:
    ab = [dim_bounds(stats.dims[d]) for d in POSE_DIMS]
    edge = stats.edge_angles
    return SamplingBounds(
        a=tuple(v[0] for v in ab),
        b=tuple(v[1] for v in ab),
        d_max_palm=stats.dist_palm_center.upper,
        d_max_finger=stats.dist_finger_center.upper,
        d_min_palm=max(0.0, stats.min_dist_palm.lower),
        d_min_finger=max(0.0, stats.min_dist_finger.lower),
        theta_min=None if edge is None else edge.lower,
        theta_max=None if edge is None else edge.upper,
    )


GATES = ("d_max_palm", "d_max_finger", "d_min_palm", "d_min_finger", "edge_angle", "collision")


def failed_gates(m: PoseMetrics, bounds: SamplingBounds) -> list[str]:
    out = []
    if m.dist_palm_center > bounds.d_max_palm:
        out.append("d_max_palm")
    if m.dist_finger_center > bounds.d_max_finger:
        out.append("d_max_finger")
    if m.min_dist_palm < bounds.d_min_palm:
        out.append("d_min_palm")
    if m.min_dist_finger < bounds.d_min_finger:
        out.append("d_min_finger")
    if m.edge_angles is not None and bounds.theta_min is not None:
        if any(not bounds.theta_min <= t <= bounds.theta_max for t in m.edge_angles):
            out.append("edge_angle")
    return out


class PoseSamplingError(RuntimeError):
    def __init__(self, tries: int, rejections: Counter):
        self.tries = tries
        self.rejections = dict(rejections)
        detail = ", ".join(f"{g}: {rejections.get(g, 0)}/{tries}" for g in GATES)
        super().__init__(f"no valid pose in {tries} tries; rejections per gate: {detail}")


def sample_valid_pose(
    bounds: SamplingBounds,
    hand: HandModel,
    joints,
    shape: ObjectShape,
    rng: np.random.Generator,
    max_tries: int = 10_000,
    eps: float = 1e-4,
) -> Pose2:
    """Rejection-sample a hand-relative object pose passing every gate and the collision check."""
    if max_tries < 1:
        raise ValueError(f"max_tries must be >= 1, got {max_tries}")
    base = forward_kinematics(hand, joints).hand_base
    rejections: Counter = Counter()
    for _ in range(max_tries):
        x, y, th = (rng.uniform(lo, hi) for lo, hi in zip(bounds.a, bounds.b))
        rel = Pose2(x, y, th)
        world = place_object_relative(base, rel)
        failed = failed_gates(pose_metrics(hand, joints, world, shape), bounds)
        if not failed and collide(hand, joints, world, shape, eps):
            failed = ["collision"]
        if not failed:
            return rel
        rejections.update(failed)
    raise PoseSamplingError(max_tries, rejections)


def stats_document(stats: PoseStats, bounds: SamplingBounds) -> dict:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        return v

    return {
        "object_id": stats.object_id,
        "dims": {d: asdict(s) for d, s in stats.dims.items()},
        "metrics": {
            k: None if getattr(stats, k) is None else asdict(getattr(stats, k))
            for k in ("dist_palm_center", "dist_finger_center", "min_dist_palm", "min_dist_finger", "edge_angles")
        },
        "bounds": {k: clean(v) if not isinstance(v, tuple) else list(v) for k, v in asdict(bounds).items()},
    }


def bounds_from_document(doc: dict) -> SamplingBounds:
    b = dict(doc["bounds"])
    for k in ("d_max_palm", "d_max_finger"):
        if b[k] is None:
            b[k] = math.inf
    b["a"] = tuple(b["a"])
    b["b"] = tuple(b["b"])
    return SamplingBounds(**b)


def save_stats(path: str | Path, docs: Sequence[dict]) -> None:
    Path(path).write_text(json.dumps({d["object_id"]: d for d in docs}, indent=1, sort_keys=True) + "\n")
