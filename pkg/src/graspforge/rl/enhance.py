"""Phase 2/3 training loops, success filtering, recording and the ablation evaluator."""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import GraspRecord
from ..sim import N_ARM, ObjectShape, WorldState
from ..sim.physics import drop_test_full
from ..sim.trial import place
from .env import EnvConfig, arm_pose, build_observation, clamp_residual, run_grasp_trial
from .td3 import ReplayBuffer, TD3Agent, TD3Config

log = logging.getLogger(__name__)

ACTION_MODES = ("goal", "waypoint")


@dataclass(frozen=True)
class PhaseConfig:
    epochs: int = 40
    episodes_per_epoch: int = 75
    k_eval: int = 3
    workers: int = 1


@dataclass
class PhaseResult:
    agent: TD3Agent
    per_record_success: dict[str, float]
    metrics: list[dict] = field(default_factory=list)


def _map(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def evaluate_records(
    env: EnvConfig,
    records: Sequence[GraspRecord],
    shapes: dict[str, ObjectShape],
    pose_mode: str,
    policy,
    k_eval: int,
    seed: int,
    workers: int = 1,
) -> dict[str, list[int]]:
    """Noiseless trials; each (record, repeat) pair gets its own derived rng."""
    jobs = [(i, k) for i in range(len(records)) for k in range(k_eval)]

    def one(job):
        i, k = job
        rec = records[i]
        rng = np.random.default_rng([seed, i, k])
        return run_grasp_trial(env, rec, shapes[rec.object_id], pose_mode, policy, rng).reward

    rewards = _map(one, jobs, workers)
    out: dict[str, list[int]] = {r.record_id: [] for r in records}
    for (i, _), rew in zip(jobs, rewards):
        out[records[i].record_id].append(rew)
    return out


def train_phase(
    records: Sequence[GraspRecord],
    shapes: dict[str, ObjectShape],
    env: EnvConfig,
    pose_mode: str,
    rng: np.random.Generator,
    phase: PhaseConfig = PhaseConfig(),
    td3: TD3Config = TD3Config(),
    agent: TD3Agent | None = None,
    phase_name: str | None = None,
) -> PhaseResult:
    if not records:
        raise ValueError("train_phase needs at least one record")
    agent = agent or TD3Agent(td3, rng)
    cfg = agent.cfg
    buffer = ReplayBuffer(cfg.buffer_size, agent.obs_dim, agent.act_dim)
    explore = agent.policy(cfg.explore_noise, rng)
    name = phase_name or pose_mode
    metrics = []
    success: dict[str, float] = {}
    n = len(records)
    for epoch in range(1, phase.epochs + 1):
        order = rng.permutation(n)
        for e in range(phase.episodes_per_epoch):
            rec = records[order[e % n]]
            tr = run_grasp_trial(env, rec, shapes[rec.object_id], pose_mode, explore, rng)
            buffer.add(tr.obs, tr.action, tr.reward, tr.next_obs, tr.done)
            if len(buffer) >= cfg.batch_size:
                for _ in range(cfg.updates_per_episode):
                    agent.update(buffer, rng)
        seed = int(rng.integers(2**63))
        rewards = evaluate_records(env, records, shapes, pose_mode, agent.policy(), phase.k_eval, seed, phase.workers)
        flat = [r for rs in rewards.values() for r in rs]
        success = {rid: sum(1 for r in rs if r == 0) / len(rs) for rid, rs in rewards.items()}
        row = {
            "epoch": epoch,
            "mean_reward": float(np.mean(flat)),
            "success_rate": float(np.mean([r == 0 for r in flat])),
            "phase": name,
        }
        metrics.append(row)
        log.info("%s epoch %d: success %.3f", name, epoch, row["success_rate"])
    return PhaseResult(agent, success, metrics)


def filter_by_success(
    records: Sequence[GraspRecord], per_record_success: dict[str, float], threshold: float = 1.0
) -> list[GraspRecord]:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    out = []
    for r in records:
        if r.record_id not in per_record_success:
            raise KeyError(f"no success entry for record {r.record_id!r}")
        if per_record_success[r.record_id] >= threshold:
            out.append(r)
    return out


# --------------------------------------------------------------------------
# enhanced-dataset recording


@dataclass
class Episode:
    record_id: str
    object_id: str
    robot_pose: np.ndarray  # initial 9 joint angles
    obs: np.ndarray  # (n, 25)
    actions: np.ndarray  # (n, 6) absolute hand-joint targets

    def __len__(self) -> int:
        return len(self.actions)

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "object_id": self.object_id,
            "robot_pose": self.robot_pose.tolist(),
            "steps": [{"obs": o.tolist(), "action": a.tolist()} for o, a in zip(self.obs, self.actions)],
        }

    @classmethod
    def from_json(cls, d: dict) -> Episode:
        steps = d["steps"]
        return cls(
            d["record_id"],
            d["object_id"],
            np.asarray(d["robot_pose"], dtype=float),
            np.array([s["obs"] for s in steps], dtype=float),
            np.array([s["action"] for s in steps], dtype=float),
        )


def clamped_trajectory(start, target, clamp: float) -> np.ndarray:
    """Joint waypoints q_1..q_n moving from `start` to `target` by at most `clamp` per step.

    n = max(1, ceil(max |target - start| / clamp)); the last waypoint is the target.
    """
    if clamp <= 0:
        raise ValueError(f"clamp must be positive, got {clamp}")
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    delta = target - start
    span = float(np.max(np.abs(delta))) if delta.size else 0.0
    n = max(1, math.ceil(span / clamp - 1e-9))
    steps = np.arange(1, n + 1)[:, None] * clamp
    way = start + np.clip(delta, -steps, steps)
    way[-1] = target
    return way


def hand_trajectory_rollout(env: EnvConfig, arm, object_pose, shape, waypoints):
    """Observations seen while the hand follows `waypoints` with the object held in place."""
    hand = env.hand
    q = np.empty(len(hand.limits))
    q[:N_ARM] = arm
    q[N_ARM:] = hand.open_pose
    init = (object_pose.x, object_pose.y)
    obs = []
    for w in waypoints:
        obs.append(build_observation(q, object_pose, init, hand, None, "diffusion"))
        q = q.copy()
        q[N_ARM:] = w
    return np.array(obs), q


def record_episode(
    env: EnvConfig,
    record: GraspRecord,
    shape: ObjectShape,
    policy,
    rng: np.random.Generator,
    clamp: float = 0.0025,
    step_cap: int = 400,
    pose_mode: str = "random",
    action_mode: str = "goal",
) -> tuple[Episode | None, str]:
    """One recording attempt; returns (episode or None, outcome tag).

    The hand moves from its open pose toward targets + residual by at most
    `clamp` per joint and step. `action_mode` picks what is logged as the
    absolute hand-joint target at each step: "goal" logs targets + residual
    (the controller clamps the motion), "waypoint" logs the next clamped
    configuration.
    """
    if action_mode not in ACTION_MODES:
        raise ValueError(f"action_mode must be one of {ACTION_MODES}, got {action_mode!r}")
    hand = env.hand
    arm = arm_pose(env, pose_mode, rng)
    pl = place(hand, arm, record.rel_pose, shape, env.params.contact_eps)
    if pl.collided:
        return None, "collision"
    q_goal = pl.joints.copy()
    q_goal[N_ARM:] = record.targets
    q_goal = hand.clamp(q_goal)
    init = (pl.object_pose.x, pl.object_pose.y)
    obs_rl = build_observation(q_goal, pl.object_pose, init, hand, record, "rl")
    residual = clamp_residual(None if policy is None else policy(obs_rl), env.r_max)
    target = np.clip(q_goal[N_ARM:] + residual, hand.hand_limits[:, 0], hand.hand_limits[:, 1])
    way = clamped_trajectory(hand.open_pose, target, clamp)
    if len(way) > step_cap:
        return None, "step_cap"
    obs, q_final = hand_trajectory_rollout(env, arm, pl.object_pose, shape, way)
    drop = drop_test_full(WorldState(q_final, pl.object_pose, shape), hand, 0.0, env.params)
    if drop.reward != 0:
        return None, "dropped"
    actions = way if action_mode == "waypoint" else np.repeat(target[None, :], len(way), axis=0)
    return Episode(record.record_id, record.object_id, pl.joints.copy(), obs, actions), "ok"


def record_enhanced_dataset(
    records: Sequence[GraspRecord],
    shapes: dict[str, ObjectShape],
    env: EnvConfig,
    policy,
    episodes_per_object: int,
    rng: np.random.Generator,
    clamp: float = 0.0025,
    step_cap: int = 400,
    pose_mode: str = "random",
    max_attempts_factor: int = 5,
    action_mode: str = "goal",
) -> tuple[list[Episode], dict[str, int]]:
    """Cycle through `records` until `episodes_per_object` successes (or attempts run out)."""
    if not records:
        raise ValueError("no records to record from")
    if clamp <= 0:
        raise ValueError(f"clamp must be positive, got {clamp}")
    episodes: list[Episode] = []
    outcomes = {"ok": 0, "collision": 0, "step_cap": 0, "dropped": 0}
    attempts = 0
    limit = max_attempts_factor * episodes_per_object
    while len(episodes) < episodes_per_object and attempts < limit:
        rec = records[attempts % len(records)]
        attempts += 1
        ep, tag = record_episode(
            env, rec, shapes[rec.object_id], policy, rng, clamp, step_cap, pose_mode, action_mode
        )
        outcomes[tag] += 1
        if ep is None:
            log.debug("discarded episode for %s: %s", rec.record_id, tag)
        else:
            episodes.append(ep)
    return episodes, outcomes


def save_episodes(path: str | Path, episodes: Sequence[Episode]) -> None:
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(json.dumps(ep.to_json()) + "\n")


def load_episodes(path: str | Path) -> list[Episode]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(Episode.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed episode ({exc})") from exc
    return out


# --------------------------------------------------------------------------


def ablation_eval(
    records: Sequence[GraspRecord],
    shapes: dict[str, ObjectShape],
    env: EnvConfig,
    policy: Callable | None,
    n_trials: int,
    rng: np.random.Generator,
) -> float:
    """Success fraction of random-pose trials; `policy` None means zero residuals."""
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if not records:
        raise ValueError("no records to evaluate")
    wins = 0
    for i in range(n_trials):
        rec = records[i % len(records)]
        tr = run_grasp_trial(env, rec, shapes[rec.object_id], "random", policy, rng)
        wins += tr.reward == 0
    return wins / n_trials
