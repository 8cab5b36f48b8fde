"""Stage orchestration: every stage reads and writes artifacts in one run directory."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from collections.abc import Callable
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, config_hash, config_to_dict
from .dataset import (
    DatasetManifest,
    GraspRecord,
    generate_seed_grasps,
    load_records,
    preselect,
    save_records,
    tilts_from_degrees,
)
from .diffusion import DiffusionPolicy, EnvSetup, PolicyConfig, rollout_batch, train_policy
from .nn.params import load_checkpoint, save_checkpoint
from .poses import (
    bounds_from_document,
    collect_pose_stats,
    sample_valid_pose,
    sampling_bounds,
    save_stats,
    stats_document,
)
from .rl import (
    EnvConfig,
    PhaseConfig,
    TD3Agent,
    TD3Config,
    ablation_eval,
    filter_by_success,
    load_episodes,
    record_enhanced_dataset,
    save_episodes,
    train_phase,
)
from .rl.env import arm_pose
from .sim import HandModel, Pose2, SimParams, shape_library
from .sim.hand import sample_robot_pose

log = logging.getLogger(__name__)

STAGES = (
    "gen-seed",
    "preselect",
    "train-rl-static",
    "train-rl-random",
    "record",
    "stats",
    "sample-poses",
    "train-diffusion",
    "eval",
    "ablate",
)
_STAGE_CODE = {name: i + 1 for i, name in enumerate(STAGES)}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage {stage}: {message}")


class MissingArtifact(StageError):
    pass


# --------------------------------------------------------------------------
# run context


@dataclass
class Run:
    cfg: PipelineConfig
    root: Path

    @property
    def objects(self) -> tuple[str, ...]:
        return self.cfg.objects

    def path(self, name: str) -> Path:
        return self.root / name

    def rng(self, stage: str, *extra: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, _STAGE_CODE[stage], *extra])

    def workers(self) -> int:
        cap = os.environ.get("GRASPFORGE_THREADS")
        n = self.cfg.threads
        if cap:
            try:
                n = min(n, max(1, int(cap)))
            except ValueError:
                pass
        return n

    # -- physical setup

    def sim_params(self) -> SimParams:
        s = self.cfg.sim
        return SimParams(
            dt=s.dt,
            duration=s.duration,
            k_n=s.k_n,
            contact_damping=s.contact_damping,
            mu=s.mu,
            linear_damping=s.linear_damping,
            angular_damping=s.angular_damping,
            drop_threshold=s.drop_threshold,
            friction_iters=s.friction_iters,
        )

    def dataset_hand(self) -> HandModel:
        return HandModel(phalanx_radius=self.cfg.sim.dataset_phalanx_radius)

    def env(self) -> EnvConfig:
        return EnvConfig(
            hand=HandModel(phalanx_radius=self.cfg.sim.env_phalanx_radius),
            params=self.sim_params(),
            arm_s=tuple(self.cfg.robot.static_pose),
            arm_a=tuple(self.cfg.robot.random_amplitude),
            r_max=self.cfg.rl.r_max,
        )

    def td3(self) -> TD3Config:
        r = self.cfg.rl
        return TD3Config(
            hidden=r.hidden,
            r_max=r.r_max,
            gamma=r.gamma,
            tau=r.tau,
            policy_noise=r.policy_noise,
            noise_clip=r.noise_clip,
            policy_delay=r.policy_delay,
            batch_size=r.batch_size,
            buffer_size=r.buffer_size,
            lr=r.lr,
            explore_noise=r.explore_noise,
        )

    def shapes(self):
        return shape_library()

    # -- artifacts

    def require(self, stage: str, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifact(stage, f"missing artifact {name}; re-run stage {producer_of(name)}")
        return p

    def records(self, stage: str, name: str) -> list[GraspRecord]:
        return load_records(self.require(stage, name))


def producer_of(artifact: str) -> str:
    for stage, outs in STAGE_OUTPUTS.items():
        if any(_matches(artifact, o) for o in outs):
            return stage
    return "?"


def _matches(name: str, pattern: str) -> bool:
    if "{obj}" not in pattern:
        return name == pattern
    pre, post = pattern.split("{obj}")
    return name.startswith(pre) and name.endswith(post)


STAGE_OUTPUTS = {
    "gen-seed": ("seeds.jsonl",),
    "preselect": ("phase1.jsonl",),
    "train-rl-static": ("phase2.jsonl", "rl_static_{obj}.json", "metrics_rl_static_{obj}.csv"),
    "train-rl-random": ("phase3.jsonl", "rl_random_{obj}.json", "metrics_rl_random_{obj}.csv"),
    "record": ("enhanced_{obj}.jsonl", "record_summary.json"),
    "stats": ("pose_stats.json",),
    "sample-poses": ("val_poses_{obj}.json",),
    "train-diffusion": ("diffusion_{obj}.json", "metrics_diffusion_{obj}.csv"),
    "eval": ("eval.json",),
    "ablate": ("ablation.json",),
}


def stage_outputs(run: Run, stage: str) -> list[Path]:
    out = []
    for pat in STAGE_OUTPUTS[stage]:
        if "{obj}" in pat:
            out.extend(run.path(pat.format(obj=o)) for o in run.objects)
        else:
            out.append(run.path(pat))
    return out


def stage_complete(run: Run, stage: str) -> bool:
    return all(p.exists() for p in stage_outputs(run, stage))


def write_json(path: Path, data) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    tmp.replace(path)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def append_csv_row(path: Path, header, row) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(header)
        w.writerow([_fmt(row[h]) for h in header])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# stages


def stage_gen_seed(run: Run) -> None:
    cfg = run.cfg
    shapes = run.shapes()
    hand = run.dataset_hand()
    params = run.sim_params()
    records = []
    for i, obj in enumerate(run.objects):
        records += generate_seed_grasps(
            shapes[obj], cfg.seedgen.n_seed, cfg.seedgen.flaw_fraction, run.rng("gen-seed", i), hand, params
        )
    save_records(run.path("seeds.jsonl"), records)


def stage_preselect(run: Run) -> None:
    seeds = run.records("preselect", "seeds.jsonl")
    kept = preselect(
        seeds,
        run.shapes(),
        run.dataset_hand(),
        run.sim_params(),
        tilts_from_degrees(run.cfg.seedgen.tilts_deg),
        run.workers(),
    )
    save_records(run.path("phase1.jsonl"), kept)


def _agent_path(run: Run, mode: str, obj: str) -> Path:
    return run.path(f"rl_{mode}_{obj}.json")


def save_agent(path: Path, agent: TD3Agent) -> None:
    save_checkpoint(path, agent.actor, {"role": "actor", "r_max": agent.cfg.r_max, "hidden": agent.cfg.hidden})


def load_actor_policy(path: Path, td3: TD3Config, rng_seed: int = 0):
    store, extra = load_checkpoint(path)
    agent = TD3Agent(TD3Config(**{**td3.__dict__, "hidden": int(extra["hidden"]), "r_max": float(extra["r_max"])}),
                     np.random.default_rng(rng_seed))
    agent.actor = store
    return agent.policy()


def _phase2_inputs(run: Run) -> list[GraspRecord]:
    phase1 = run.records("train-rl-static", "phase1.jsonl")
    out = []
    for obj in run.objects:
        out += [r for r in phase1 if r.object_id == obj][: run.cfg.rl.max_records]
    return out


def _train_rl(run: Run, mode: str) -> None:
    stage = f"train-rl-{mode}"
    if mode == "static":
        inputs = _phase2_inputs(run)
        out_name = "phase2.jsonl"
        epochs = run.cfg.rl.epochs_static
    else:
        inputs = run.records(stage, "phase2.jsonl")
        out_name = "phase3.jsonl"
        epochs = run.cfg.rl.epochs_random
    env = run.env()
    shapes = run.shapes()
    td3 = run.td3()
    phase = PhaseConfig(epochs, run.cfg.rl.episodes_per_epoch, run.cfg.rl.k_eval, run.workers())
    kept: list[GraspRecord] = []
    for i, obj in enumerate(run.objects):
        recs = [r for r in inputs if r.object_id == obj]
        csv_path = run.path(f"metrics_rl_{mode}_{obj}.csv")
        if csv_path.exists():
            csv_path.unlink()
        if not recs:
            raise StageError(stage, f"no {obj} records left to train on")
        rng = run.rng(stage, i)
        agent = TD3Agent(td3, rng)
        if mode == "random":
            # Phase 3 continues from the Phase 2 actor
            warm = _agent_path(run, "static", obj)
            if not warm.exists():
                raise MissingArtifact(stage, f"missing artifact {warm.name}; re-run stage train-rl-static")
            agent.actor, _ = load_checkpoint(warm)
            agent.actor_target = agent.actor.copy()
        res = train_phase(recs, shapes, env, mode, rng, phase, td3, agent, phase_name=mode)
        for row in res.metrics:
            append_csv_row(csv_path, ("epoch", "mean_reward", "success_rate", "phase"), row)
        kept += filter_by_success(recs, res.per_record_success, run.cfg.rl.success_threshold)
        save_agent(_agent_path(run, mode, obj), res.agent)
    save_records(run.path(out_name), kept)


def stage_train_rl_static(run: Run) -> None:
    _train_rl(run, "static")


def stage_train_rl_random(run: Run) -> None:
    _train_rl(run, "random")


def stage_record(run: Run) -> None:
    stage = "record"
    phase3 = run.records(stage, "phase3.jsonl")
    env = run.env()
    shapes = run.shapes()
    rc = run.cfg.record
    summary = {}
    for i, obj in enumerate(run.objects):
        recs = [r for r in phase3 if r.object_id == obj]
        if not recs:
            raise StageError(stage, f"no Phase-3 {obj} records to record from")
        policy = load_actor_policy(run.require(stage, f"rl_random_{obj}.json"), run.td3())
        eps, outcomes = record_enhanced_dataset(
            recs,
            shapes,
            env,
            policy,
            rc.episodes_per_object,
            run.rng(stage, i),
            rc.clamp,
            rc.step_cap,
            action_mode=rc.action_mode,
        )
        if not eps:
            raise StageError(stage, f"{obj}: no successful episodes recorded ({outcomes})")
        save_episodes(run.path(f"enhanced_{obj}.jsonl"), eps)
        lengths = [len(e) for e in eps]
        summary[obj] = {"episodes": len(eps), "outcomes": outcomes, "max_len": max(lengths), "mean_len": float(np.mean(lengths))}
    write_json(run.path("record_summary.json"), summary)


def stage_stats(run: Run) -> None:
    phase3 = run.records("stats", "phase3.jsonl")
    shapes = run.shapes()
    hand = run.env().hand
    docs = []
    for obj in run.objects:
        try:
            st = collect_pose_stats(phase3, shapes[obj], hand)
        except ValueError as exc:
            raise StageError("stats", str(exc)) from exc
        docs.append(stats_document(st, sampling_bounds(st)))
    save_stats(run.path("pose_stats.json"), docs)


def stage_sample_poses(run: Run) -> None:
    stage = "sample-poses"
    docs = json.loads(run.require(stage, "pose_stats.json").read_text())
    shapes = run.shapes()
    env = run.env()
    dc = run.cfg.diffusion
    for i, obj in enumerate(run.objects):
        bounds = bounds_from_document(docs[obj])
        rng = run.rng(stage, i)
        rows = []
        for _ in range(dc.val_episodes):
            arm = arm_pose(env, "random", rng) if dc.randomize_robot_pose else np.asarray(env.arm_s, dtype=float)
            q = np.concatenate([arm, env.hand.open_pose])
            rel = sample_valid_pose(bounds, env.hand, q, shapes[obj], rng, run.cfg.sampler.max_tries)
            rows.append({"arm": arm.tolist(), "rel_pose": [rel.x, rel.y, rel.theta]})
        write_json(run.path(f"val_poses_{obj}.json"), rows)


def _setups(run: Run, obj: str, stage: str) -> list[EnvSetup]:
    rows = json.loads(run.require(stage, f"val_poses_{obj}.json").read_text())
    shape = run.shapes()[obj]
    return [EnvSetup(np.asarray(r["arm"], dtype=float), Pose2(*r["rel_pose"]), shape) for r in rows]


def _rollout_cap(run: Run, stage: str) -> int:
    dc = run.cfg.diffusion
    if dc.rollout_cap:
        return dc.rollout_cap
    summary = json.loads(run.require(stage, "record_summary.json").read_text())
    longest = max(summary[o]["max_len"] for o in run.objects)
    return min(run.cfg.record.step_cap, int(math.ceil(1.1 * longest)))


def validate_policy(run: Run, policy: DiffusionPolicy, setups, seed_key: tuple, cap: int) -> float:
    env = run.env()
    rngs = [np.random.default_rng([run.cfg.seed, *seed_key, j]) for j in range(len(setups))]
    res = rollout_batch(policy, setups, env.hand, env.params, rngs, cap, run.cfg.record.clamp)
    return float(np.mean([r.reward == 0 for r in res]))


def _policy_config(run: Run) -> PolicyConfig:
    d = run.cfg.diffusion
    return PolicyConfig(
        obs_horizon=d.obs_horizon,
        pred_horizon=d.pred_horizon,
        exec_horizon=d.exec_horizon,
        T=d.T,
        widths=tuple(d.widths),
        lr=d.lr,
        batch_size=d.batch_size,
        clip_sample=d.clip_sample,
    )


def stage_train_diffusion(run: Run) -> None:
    stage = "train-diffusion"
    dc = run.cfg.diffusion
    cap = _rollout_cap(run, stage)
    for i, obj in enumerate(run.objects):
        eps = load_episodes(run.require(stage, f"enhanced_{obj}.jsonl"))
        setups = _setups(run, obj, stage)
        obs = np.concatenate([e.obs for e in eps])
        act = np.concatenate([e.actions for e in eps])
        rng = run.rng(stage, i)
        policy = DiffusionPolicy.create(_policy_config(run), obs, act, rng, run.env().hand)
        csv_path = run.path(f"metrics_diffusion_{obj}.csv")
        if csv_path.exists():
            csv_path.unlink()

        def validate(p, it, _i=i, _setups=setups, _csv=csv_path):
            rate = validate_policy(run, p, _setups, (_STAGE_CODE[stage], _i, it), cap)
            append_csv_row(_csv, ("iteration", "mean_success_rate"), {"iteration": it, "mean_success_rate": rate})
            log.info("%s diffusion iteration %d: success %.3f", obj, it, rate)
            return rate

        train_policy(policy, eps, dc.iterations, rng, validate, dc.validate_every)
        policy.save(run.path(f"diffusion_{obj}.json"), {"object_id": obj, "rollout_cap": cap})


def stage_eval(run: Run) -> None:
    stage = "eval"
    out = {}
    for i, obj in enumerate(run.objects):
        policy = DiffusionPolicy.load(run.require(stage, f"diffusion_{obj}.json"))
        _, meta = load_checkpoint(run.path(f"diffusion_{obj}.json"))
        cap = int(meta.get("rollout_cap") or _rollout_cap(run, stage))
        setups = _setups(run, obj, stage)
        out[obj] = validate_policy(run, policy, setups, (_STAGE_CODE[stage], i), cap)
    out["mean"] = float(np.mean([out[o] for o in run.objects]))
    write_json(run.path("eval.json"), out)


def stage_ablate(run: Run) -> None:
    stage = "ablate"
    phase3 = run.records(stage, "phase3.jsonl")
    env = run.env()
    shapes = run.shapes()
    td3 = run.td3()
    n = run.cfg.ablation.n_trials
    table = {}
    for i, obj in enumerate(run.objects):
        recs = [r for r in phase3 if r.object_id == obj]
        if not recs:
            raise StageError(stage, f"no Phase-3 {obj} records")
        row = {}
        for j, mode in enumerate(("none", "static_actor", "random_actor")):
            if mode == "none":
                policy = None
            else:
                name = "static" if mode == "static_actor" else "random"
                policy = load_actor_policy(run.require(stage, f"rl_{name}_{obj}.json"), td3)
            # the same trial stream for every mode: only the residual differs
            row[mode] = ablation_eval(recs, shapes, env, policy, n, run.rng(stage, i))
        table[obj] = row
    table["mean"] = {m: float(np.mean([table[o][m] for o in run.objects])) for m in ("none", "static_actor", "random_actor")}
    write_json(run.path("ablation.json"), table)


STAGE_FUNCS: dict[str, Callable[[Run], None]] = {
    "gen-seed": stage_gen_seed,
    "preselect": stage_preselect,
    "train-rl-static": stage_train_rl_static,
    "train-rl-random": stage_train_rl_random,
    "record": stage_record,
    "stats": stage_stats,
    "sample-poses": stage_sample_poses,
    "train-diffusion": stage_train_diffusion,
    "eval": stage_eval,
    "ablate": stage_ablate,
}


# --------------------------------------------------------------------------
# run directory handling


class RunLocked(RuntimeError):
    pass


@contextmanager
def run_lock(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    lock = root / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise RunLocked(f"{root} is in use by another process (remove {lock} if stale)") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def open_run(cfg: PipelineConfig) -> Run:
    """Create or reopen a run directory; a directory belongs to exactly one config."""
    root = Path(cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    cfg_path = root / "config.json"
    h = config_hash(cfg)
    if cfg_path.exists():
        old = json.loads(cfg_path.read_text())
        if old.get("config_hash") != h:
            raise ConfigError(f"{root} was created with config hash {old.get('config_hash')}, current is {h}")
    else:
        data = config_to_dict(cfg)
        data.pop("out", None)
        data.pop("threads", None)
        write_json(cfg_path, {"config_hash": h, "config": data})
    return Run(cfg, root)


def run_stage(run: Run, stage: str, timings: dict | None = None) -> None:
    t0 = time.perf_counter()
    try:
        STAGE_FUNCS[stage](run)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - rewrapped with the stage name
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    if timings is not None:
        timings[stage] = time.perf_counter() - t0


def run_pipeline(cfg: PipelineConfig, force: bool = False, stages=STAGES):
    """Run every stage whose artifacts are missing (or all with `force`), then the report.

    A partial `stages` selection skips the report and returns None.
    """
    from .report import build_report, write_report

    run = open_run(cfg)
    timings: dict[str, float] = {}
    with run_lock(run.root):
        for stage in stages:
            if not force and stage_complete(run, stage):
                log.info("stage %s: artifacts present, skipping", stage)
                continue
            log.info("stage %s", stage)
            run_stage(run, stage, timings)
        report = None
        if tuple(stages) == STAGES:
            report = build_report(run.root)
            write_report(run.root, report)
    tpath = run.path("timings.json")
    old = json.loads(tpath.read_text()) if tpath.exists() else {}
    old.update({k: round(v, 3) for k, v in timings.items()})
    write_json(tpath, old)
    return report
