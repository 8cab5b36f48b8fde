"""Pipeline configuration: JSON loading, overrides, validation, hashing."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

from .sim import SHAPE_IDS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0 / 240.0
    duration: float = 1.0
    k_n: float = 5000.0
    contact_damping: float = 40.0
    mu: float = 0.8
    linear_damping: float = 2.0
    angular_damping: float = 0.5
    drop_threshold: float = 0.025
    friction_iters: int = 6
    dataset_phalanx_radius: float = 0.01
    env_phalanx_radius: float = 0.008


@dataclass(frozen=True)
class RobotConfig:
    static_pose: tuple[float, float, float] = (0.0, -math.pi / 2, math.pi / 4)
    random_amplitude: tuple[float, float, float] = (math.pi / 2, math.pi / 12, math.pi / 12)


@dataclass(frozen=True)
class SeedGenConfig:
    n_seed: int = 80
    flaw_fraction: float = 0.4
    tilts_deg: tuple[float, ...] = (-25.0, -12.5, 0.0, 12.5, 25.0)


@dataclass(frozen=True)
class RLConfig:
    max_records: int = 50
    epochs_static: int = 40
    epochs_random: int = 60
    episodes_per_epoch: int = 75
    k_eval: int = 3
    success_threshold: float = 1.0
    hidden: int = 256
    r_max: float = 0.15
    gamma: float = 0.99
    tau: float = 0.005
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    batch_size: int = 256
    buffer_size: int = 50_000
    lr: float = 3e-4
    explore_noise: float = 0.1


@dataclass(frozen=True)
class RecordConfig:
    episodes_per_object: int = 200
    clamp: float = 0.0025
    step_cap: int = 400
    action_mode: str = "goal"  # or "waypoint"


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 50
    obs_horizon: int = 2
    pred_horizon: int = 8
    exec_horizon: int = 4
    iterations: int = 5000
    batch_size: int = 16
    lr: float = 1e-3
    widths: tuple[int, int] = (32, 64)
    clip_sample: bool = True
    validate_every: int = 500
    val_episodes: int = 50
    # 0 means: 10% above the longest recorded episode, capped by record.step_cap
    rollout_cap: int = 0
    randomize_robot_pose: bool = True


@dataclass(frozen=True)
class SamplerConfig:
    max_tries: int = 10_000


@dataclass(frozen=True)
class AblationConfig:
    n_trials: int = 150


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    objects: tuple[str, ...] = SHAPE_IDS
    out: str = "runs/desk"
    threads: int = 1
    sim: SimConfig = field(default_factory=SimConfig)
    robot: RobotConfig = field(default_factory=RobotConfig)
    seedgen: SeedGenConfig = field(default_factory=SeedGenConfig)
    rl: RLConfig = field(default_factory=RLConfig)
    record: RecordConfig = field(default_factory=RecordConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)


# fields that do not change any result
NON_SEMANTIC = ("out", "threads")


# --------------------------------------------------------------------------
# dict <-> dataclass


def _build(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        default = getattr(defaults, name)
        where = f"{path}.{name}" if path else name
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, where)
        else:
            kwargs[name] = _coerce(default, value, where)
    return cls(**kwargs)


def _coerce(default, value, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        if default:
            return tuple(_coerce(default[0], v, f"{where}[{i}]") for i, v in enumerate(value))
        return tuple(value)
    return value


def config_to_dict(cfg) -> dict:
    def conv(v):
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        return v

    return conv(asdict(cfg))


def config_from_dict(data: dict) -> PipelineConfig:
    cfg = _build(PipelineConfig, data)
    validate(cfg)
    return cfg


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return config_from_dict({})
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def apply_overrides(cfg: PipelineConfig, overrides) -> PipelineConfig:
    """Apply `key.sub=value` strings; values parse as JSON, falling back to plain strings."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value: Any = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.strip().split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override {key!r}: unknown section {p!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"override {key!r}: unknown key")
        node[parts[-1]] = value
    return config_from_dict(data)


def config_hash(cfg: PipelineConfig) -> str:
    data = config_to_dict(cfg)
    for k in NON_SEMANTIC:
        data.pop(k, None)
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# validation


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(cfg: PipelineConfig) -> None:
    _check(cfg.seed >= 0, "seed must be >= 0")
    _check(len(cfg.objects) > 0, "objects must be non-empty")
    _check(len(set(cfg.objects)) == len(cfg.objects), "objects must be unique")
    for o in cfg.objects:
        _check(o in SHAPE_IDS, f"objects: unknown object {o!r} (known: {', '.join(SHAPE_IDS)})")
    _check(cfg.threads >= 1, "threads must be >= 1")

    s = cfg.sim
    _check(0 < s.dt <= 0.01, "sim.dt must be in (0, 0.01]")
    _check(s.duration > 0, "sim.duration must be positive")
    _check(s.k_n > 0 and s.contact_damping >= 0, "sim.k_n must be positive, sim.contact_damping >= 0")
    _check(s.mu >= 0, "sim.mu must be >= 0")
    _check(s.linear_damping >= 0 and s.angular_damping >= 0, "sim damping must be >= 0")
    _check(s.drop_threshold > 0, "sim.drop_threshold must be positive")
    _check(s.friction_iters >= 1, "sim.friction_iters must be >= 1")
    _check(s.dataset_phalanx_radius > 0 and s.env_phalanx_radius > 0, "phalanx radii must be positive")

    r = cfg.robot
    _check(len(r.static_pose) == 3 and len(r.random_amplitude) == 3, "robot poses need 3 arm joints")
    for sv, av in zip(r.static_pose, r.random_amplitude):
        _check(av >= 0 and -math.pi <= sv - av and sv + av <= math.pi, "robot: S +- A must stay in [-pi, pi]")

    g = cfg.seedgen
    _check(g.n_seed >= 1, "seedgen.n_seed must be >= 1")
    _check(0.0 <= g.flaw_fraction <= 1.0, "seedgen.flaw_fraction must be in [0, 1]")
    _check(len(g.tilts_deg) >= 1, "seedgen.tilts_deg must be non-empty")
    _check(all(abs(t) < 90 for t in g.tilts_deg), "seedgen.tilts_deg must lie in (-90, 90)")

    rl = cfg.rl
    _check(rl.max_records >= 1, "rl.max_records must be >= 1")
    _check(rl.epochs_static >= 1 and rl.epochs_random >= 1, "rl epochs must be >= 1")
    _check(rl.episodes_per_epoch >= 1 and rl.k_eval >= 1, "rl.episodes_per_epoch and rl.k_eval must be >= 1")
    _check(0.0 <= rl.success_threshold <= 1.0, "rl.success_threshold must be in [0, 1]")
    _check(rl.hidden >= 1 and rl.r_max > 0, "rl.hidden must be >= 1 and rl.r_max > 0")
    _check(0.0 <= rl.gamma <= 1.0 and 0.0 <= rl.tau <= 1.0, "rl.gamma and rl.tau must be in [0, 1]")
    _check(rl.policy_noise >= 0 and rl.noise_clip >= 0 and rl.explore_noise >= 0, "rl noise must be >= 0")
    _check(rl.policy_delay >= 1, "rl.policy_delay must be >= 1")
    _check(1 <= rl.batch_size <= rl.buffer_size, "need 1 <= rl.batch_size <= rl.buffer_size")
    _check(rl.lr >= 0, "rl.lr must be >= 0")

    rec = cfg.record
    _check(rec.episodes_per_object >= 1, "record.episodes_per_object must be >= 1")
    _check(rec.clamp > 0, "record.clamp must be positive")
    _check(rec.step_cap >= 1, "record.step_cap must be >= 1")
    _check(rec.action_mode in ("goal", "waypoint"), "record.action_mode must be 'goal' or 'waypoint'")

    d = cfg.diffusion
    _check(d.T >= 2, "diffusion.T must be >= 2")
    _check(d.obs_horizon >= 1, "diffusion.obs_horizon must be >= 1")
    _check(d.pred_horizon >= 4 and d.pred_horizon % 4 == 0, "diffusion.pred_horizon must be a positive multiple of 4")
    _check(1 <= d.exec_horizon <= d.pred_horizon, "need 1 <= diffusion.exec_horizon <= pred_horizon")
    _check(d.iterations >= 1 and d.batch_size >= 1, "diffusion.iterations and batch_size must be >= 1")
    _check(d.lr > 0, "diffusion.lr must be positive")
    _check(len(d.widths) == 2 and all(w >= 8 and w % 8 == 0 for w in d.widths), "diffusion.widths: two multiples of 8")
    _check(d.validate_every >= 1 and d.val_episodes >= 1, "diffusion validation settings must be >= 1")
    _check(d.rollout_cap >= 0, "diffusion.rollout_cap must be >= 0")

    _check(cfg.sampler.max_tries >= 1, "sampler.max_tries must be >= 1")
    _check(cfg.ablation.n_trials >= 1, "ablation.n_trials must be >= 1")


def with_out(cfg: PipelineConfig, out: str | None = None, seed: int | None = None) -> PipelineConfig:
    if out is not None:
        cfg = replace(cfg, out=str(out))
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    validate(cfg)
    return cfg
