"""Grasp records: synthetic seed generation, gravity-tilt pre-selection, JSONL storage."""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sim import N_ARM, HandModel, ObjectShape, Pose2, SimParams, replay
from .sim.hand import DEFAULT_S, forward_kinematics, static_robot_pose
from .sim.physics import MAX_CONTACTS, _find_contacts
from .sim.trial import place

DEFAULT_TILTS_DEG = (-25.0, -12.5, 0.0, 12.5, 25.0)


@dataclass(frozen=True)
class GraspRecord:
    record_id: str
    object_id: str
    scale: float
    rel_pose: Pose2
    hand_joint_targets: tuple[float, ...]
    # test-only ground truth; filters must not read it
    synthetic_flawed: bool = field(default=False, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "hand_joint_targets", tuple(float(v) for v in self.hand_joint_targets))

    @property
    def targets(self) -> np.ndarray:
        return np.array(self.hand_joint_targets)

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "object_id": self.object_id,
            "scale": self.scale,
            "rel_pose": [self.rel_pose.x, self.rel_pose.y, self.rel_pose.theta],
            "hand_joint_targets": list(self.hand_joint_targets),
            "provenance": {"synthetic_flawed": self.synthetic_flawed},
        }

    @classmethod
    def from_json(cls, d: dict) -> GraspRecord:
        x, y, th = d["rel_pose"]
        return cls(
            record_id=str(d["record_id"]),
            object_id=str(d["object_id"]),
            scale=float(d["scale"]),
            rel_pose=Pose2(x, y, th),
            hand_joint_targets=tuple(d["hand_joint_targets"]),
            synthetic_flawed=bool(d.get("provenance", {}).get("synthetic_flawed", False)),
        )


@dataclass(frozen=True)
class SeedConfig:
    """Where the generator puts objects and how it closes the hand."""

    clearance: float = 0.03  # gap between palm line and the object's top
    jitter_xy: float = 0.01
    jitter_theta: float = 0.15
    nominal_theta: dict = field(
        default_factory=lambda: {"banana": math.pi / 2, "bottle": 0.0, "camera": math.pi / 2}
    )
    close_step: float = 0.01
    squeeze: float = 0.05
    deficit_range: tuple[float, float] = (0.1, 0.4)
    offset_range: tuple[float, float] = (0.05, 0.15)
    max_placement_tries: int = 200


def nominal_rel_pose(shape: ObjectShape, cfg: SeedConfig) -> Pose2:
    th = cfg.nominal_theta.get(shape.id, 0.0)
    top = Pose2(0.0, 0.0, th).apply(shape.points)[:, 1].max()
    return Pose2(0.0, -cfg.clearance - top, th)


def finger_touching(hand: HandModel, joints, object_pose: Pose2, shape, finger: int) -> bool:
    kin = forward_kinematics(hand, joints)
    caps = np.ascontiguousarray(kin.capsules[1 + 2 * finger : 3 + 2 * finger])
    out = np.empty((MAX_CONTACTS, 5))
    parts = np.empty(MAX_CONTACTS, dtype=np.int64)
    poly = object_pose.apply(shape.points)
    return _find_contacts(poly, caps, hand.phalanx_radius, out, parts) > 0


def close_fingers(hand: HandModel, joints, object_pose: Pose2, shape, step=0.01, squeeze=0.05) -> np.ndarray:
    """Flex each joint in `step` increments until its finger touches, then squeeze.

    Joints are closed proximal first, then distal. Raises if no finger touches.
    """
    q = np.array(joints, dtype=float)
    touched = 0
    for f in range(3):
        for j in range(2):
            idx = N_ARM + 2 * f + j
            hi = hand.limits[idx, 1]
            while not finger_touching(hand, q, object_pose, shape, f) and q[idx] + step <= hi:
                q[idx] += step
        if finger_touching(hand, q, object_pose, shape, f):
            touched += 1
        for j in range(2):
            idx = N_ARM + 2 * f + j
            q[idx] = min(q[idx] + squeeze, hand.limits[idx, 1])
    if touched == 0:
        raise RuntimeError("closing found no touching configuration within joint limits")
    return q


def generate_seed_grasps(
    shape: ObjectShape,
    n: int,
    flaw_fraction: float,
    rng: np.random.Generator,
    hand: HandModel | None = None,
    params: SimParams | None = None,
    cfg: SeedConfig | None = None,
    id_prefix: str | None = None,
) -> list[GraspRecord]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= flaw_fraction <= 1.0:
        raise ValueError(f"flaw_fraction must be in [0, 1], got {flaw_fraction}")
    hand = hand or HandModel()
    params = params or SimParams()
    cfg = cfg or SeedConfig()
    n_flawed = int(round(flaw_fraction * n))
    flawed = set(rng.choice(n, size=n_flawed, replace=False).tolist()) if n_flawed else set()
    nominal = nominal_rel_pose(shape, cfg)
    arm = np.asarray(DEFAULT_S, dtype=float)
    prefix = id_prefix or shape.id
    out = []
    for i in range(n):
        for _ in range(cfg.max_placement_tries):
            rel = Pose2(
                nominal.x + rng.uniform(-cfg.jitter_xy, cfg.jitter_xy),
                nominal.y + rng.uniform(-cfg.jitter_xy, cfg.jitter_xy),
                nominal.theta + rng.uniform(-cfg.jitter_theta, cfg.jitter_theta),
            )
            pl = place(hand, arm, rel, shape, params.contact_eps)
            if not pl.collided:
                break
        else:
            raise RuntimeError(f"{shape.id}: no collision-free placement in {cfg.max_placement_tries} tries")
        q = close_fingers(hand, pl.joints, pl.object_pose, shape, cfg.close_step, cfg.squeeze)
        targets = q[N_ARM:]
        is_flawed = i in flawed
        if is_flawed:
            if rng.uniform() < 0.5:
                targets = targets - rng.uniform(*cfg.deficit_range)
            else:
                off = rng.uniform(*cfg.offset_range) * (1.0 if rng.uniform() < 0.5 else -1.0)
                rel = Pose2(rel.x + off, rel.y, rel.theta)
            targets = np.clip(targets, hand.hand_limits[:, 0], hand.hand_limits[:, 1])
        out.append(
            GraspRecord(
                record_id=f"{prefix}-{i:05d}",
                object_id=shape.id,
                scale=shape.scale,
                rel_pose=rel,
                hand_joint_targets=tuple(targets),
                synthetic_flawed=is_flawed,
            )
        )
    return out


def tilts_from_degrees(degrees: Iterable[float]) -> list[float]:
    return [math.radians(d) for d in degrees]


def passes_all_tilts(record: GraspRecord, shape, hand: HandModel, params: SimParams, tilts, arm=DEFAULT_S) -> bool:
    for tilt in tilts:
        res = replay(hand, params, arm, record.rel_pose, record.targets, shape, tilt)
        if res.reward != 0:
            return False
    return True


def preselect(
    records: Sequence[GraspRecord],
    shapes: dict[str, ObjectShape],
    hand: HandModel | None = None,
    params: SimParams | None = None,
    tilts: Sequence[float] | None = None,
    workers: int = 1,
) -> list[GraspRecord]:
    """Keep records whose zero-residual replay at the static pose survives every tilt."""
    hand = hand or HandModel()
    params = params or SimParams()
    tilts = tilts_from_degrees(DEFAULT_TILTS_DEG) if tilts is None else list(tilts)
    if not tilts:
        raise ValueError("tilt set must be non-empty")

    def check(rec):
        return passes_all_tilts(rec, shapes[rec.object_id], hand, params, tilts)

    if workers > 1 and len(records) > 1:
        with ThreadPoolExecutor(workers) as pool:
            keep = list(pool.map(check, records))
    else:
        keep = [check(r) for r in records]
    return [r for r, k in zip(records, keep) if k]


# --------------------------------------------------------------------------
# storage


class DatasetFormatError(ValueError):
    pass


def save_records(path: str | Path, records: Iterable[GraspRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")


def load_records(path: str | Path, known_objects: Iterable[str] | None = None) -> list[GraspRecord]:
    from .sim import SHAPE_IDS

    known = set(SHAPE_IDS if known_objects is None else known_objects)
    records = []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = GraspRecord.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if rec.object_id not in known:
                raise DatasetFormatError(f"{path}:{lineno}: unknown object_id {rec.object_id!r}")
            if rec.record_id in seen:
                raise DatasetFormatError(f"{path}:{lineno}: duplicate record_id {rec.record_id!r}")
            seen.add(rec.record_id)
            records.append(rec)
    return records


@dataclass
class DatasetManifest:
    object_ids: list[str]
    counts: dict[str, int]  # phase name -> count, in pipeline order
    seed: int
    config_hash: str

    def validate(self) -> None:
        values = list(self.counts.values())
        if any(b > a for a, b in zip(values, values[1:])):
            raise ValueError(f"phase counts must be non-increasing: {self.counts}")

    def save(self, path: str | Path) -> None:
        self.validate()
        Path(path).write_text(json.dumps(self.__dict__, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        return cls(**json.loads(Path(path).read_text()))
