"""Diffusion policy: training loop, ancestral sampling, receding-horizon rollouts."""

from __future__ import annotations

import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..nn import autograd as ag
from ..nn.autograd import Tensor, backward, no_grad
from ..nn.models import UNetConfig, init_unet, unet_forward
from ..nn.params import AdamConfig, ParamStore, adam_step, load_checkpoint, save_checkpoint
from ..rl.env import OBS_DIM_DIFFUSION
from ..sim import N_ARM, N_HAND, HandModel, ObjectShape, Pose2, SimParams, WorldState
from ..sim.physics import drop_test_full
from ..sim.trial import place
from ..rl.env import build_observation
from .schedule import DiffusionSchedule, add_noise, cosine_schedule
from .windows import MinMaxNormalizer, StandardNormalizer, build_training_windows, stack_windows

# eps predictor signature: (params, x_t (B, H, A), cond (B, C), t (B,)) -> Tensor (B, H, A)
NoisePredictor = Callable[[dict, object, object, np.ndarray], Tensor]


@dataclass(frozen=True)
class PolicyConfig:
    obs_horizon: int = 2
    pred_horizon: int = 8
    exec_horizon: int = 4
    T: int = 50
    obs_dim: int = OBS_DIM_DIFFUSION
    action_dim: int = N_HAND
    widths: tuple[int, int] = (32, 64)
    lr: float = 1e-3
    batch_size: int = 16
    clip_sample: bool = True
    ema_decay: float = 0.999  # 0 disables the weight average

    def unet(self) -> UNetConfig:
        return UNetConfig(
            action_dim=self.action_dim, cond_dim=self.obs_horizon * self.obs_dim, widths=tuple(self.widths)
        )


@dataclass
class DiffusionPolicy:
    cfg: PolicyConfig
    store: ParamStore
    action_norm: MinMaxNormalizer
    obs_norm: StandardNormalizer
    schedule: DiffusionSchedule = field(init=False)
    action_lo: np.ndarray | None = None  # joint limits for the final clamp
    action_hi: np.ndarray | None = None
    ema: ParamStore | None = None  # averaged weights used for sampling when present

    def __post_init__(self):
        self.schedule = cosine_schedule(self.cfg.T)

    def sampling_params(self) -> dict:
        src = self.ema if self.ema is not None else self.store
        return {k: Tensor(v) for k, v in src.params.items()}

    @classmethod
    def create(cls, cfg: PolicyConfig, obs_data, action_data, rng, hand: HandModel | None = None) -> DiffusionPolicy:
        store = ParamStore()
        init_unet(store, cfg.unet(), rng)
        hand = hand or HandModel()
        return cls(
            cfg,
            store,
            MinMaxNormalizer.fit(action_data),
            StandardNormalizer.fit(obs_data),
            hand.hand_limits[:, 0].copy(),
            hand.hand_limits[:, 1].copy(),
        )

    def predictor(self) -> NoisePredictor:
        ucfg = self.cfg.unet()
        return lambda P, x, cond, t: unet_forward(P, x, cond, t, ucfg)

    def condition(self, obs_history) -> np.ndarray:
        """(B, obs_horizon, obs_dim) raw observations -> (B, cond_dim) network input."""
        h = np.asarray(obs_history, dtype=float)
        if h.shape[1:] != (self.cfg.obs_horizon, self.cfg.obs_dim):
            raise ValueError(
                f"expected obs history (batch, {self.cfg.obs_horizon}, {self.cfg.obs_dim}), got {h.shape}"
            )
        return self.obs_norm.normalize(h).reshape(len(h), -1)

    def sample(self, obs_history, rngs, predictor: NoisePredictor | None = None) -> np.ndarray:
        """Denoise one action block per history row; one rng per row keeps rows independent."""
        cond = self.condition(obs_history)
        P = self.sampling_params()
        x = ddpm_sample(
            predictor or self.predictor(),
            P,
            cond,
            self.schedule,
            rngs,
            (self.cfg.pred_horizon, self.cfg.action_dim),
            self.cfg.clip_sample,
        )
        a = self.action_norm.denormalize(x)
        if self.action_lo is not None:
            a = np.clip(a, self.action_lo, self.action_hi)
        return a

    # -- persistence

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        c = self.cfg
        meta = {
            "schedule": "cosine",
            "T": c.T,
            "horizons": {"obs": c.obs_horizon, "pred": c.pred_horizon, "exec": c.exec_horizon},
            "obs_dim": c.obs_dim,
            "action_dim": c.action_dim,
            "widths": list(c.widths),
            "lr": c.lr,
            "batch_size": c.batch_size,
            "clip_sample": c.clip_sample,
            "ema_decay": c.ema_decay,
            "action_norm": self.action_norm.to_json(),
            "obs_norm": self.obs_norm.to_json(),
            "action_limits": None
            if self.action_lo is None
            else {"lo": self.action_lo.tolist(), "hi": self.action_hi.tolist()},
        }
        if extra:
            meta.update(extra)
        store = self.store.copy()
        if self.ema is not None:
            for k, v in self.ema.params.items():
                store.add(f"ema:{k}", v)
        meta["has_ema"] = self.ema is not None
        save_checkpoint(path, store, meta)

    @classmethod
    def load(cls, path: str | Path) -> DiffusionPolicy:
        full, meta = load_checkpoint(path)
        store = ParamStore(step=full.step)
        ema = ParamStore(step=full.step) if meta.get("has_ema") else None
        for k in full.params:
            if k.startswith("ema:"):
                ema.params[k[4:]] = full.params[k]
                ema.m[k[4:]] = full.m[k]
                ema.v[k[4:]] = full.v[k]
            else:
                store.params[k] = full.params[k]
                store.m[k] = full.m[k]
                store.v[k] = full.v[k]
        if meta.get("schedule") != "cosine":
            raise ValueError(f"{path}: unsupported schedule {meta.get('schedule')!r}")
        h = meta["horizons"]
        cfg = PolicyConfig(
            obs_horizon=h["obs"],
            pred_horizon=h["pred"],
            exec_horizon=h["exec"],
            T=meta["T"],
            obs_dim=meta["obs_dim"],
            action_dim=meta["action_dim"],
            widths=tuple(meta["widths"]),
            lr=meta["lr"],
            batch_size=meta["batch_size"],
            clip_sample=bool(meta.get("clip_sample", True)),
            ema_decay=float(meta.get("ema_decay", 0.0)),
        )
        lim = meta.get("action_limits")
        return cls(
            cfg,
            store,
            MinMaxNormalizer.from_json(meta["action_norm"]),
            StandardNormalizer.from_json(meta["obs_norm"]),
            None if lim is None else np.asarray(lim["lo"], dtype=float),
            None if lim is None else np.asarray(lim["hi"], dtype=float),
            ema,
        )


# --------------------------------------------------------------------------
# sampling


def ddpm_sample(
    predictor: NoisePredictor,
    P: dict,
    cond,
    schedule: DiffusionSchedule,
    rngs: Sequence[np.random.Generator] | np.random.Generator,
    block_shape: tuple[int, int],
    clip_sample: bool = False,
) -> np.ndarray:
    """Ancestral sampling in normalized action space, returns x_0 of shape (B, H, A).

    Row b draws x_T and every z from rngs[b]; a single generator is used for a
    batch of one. With `clip_sample` the implied x_0 estimate is clipped to
    [-1, 1] before forming the posterior mean; without it the mean is the plain
    eps-parameterized update.
    """
    cond = np.asarray(cond, dtype=float)
    B = len(cond)
    if isinstance(rngs, np.random.Generator):
        rngs = [rngs]
    if len(rngs) != B:
        raise ValueError(f"need one rng per batch row ({B}), got {len(rngs)}")
    x = np.stack([r.standard_normal(block_shape) for r in rngs])
    sched = schedule
    with no_grad():
        for t in range(sched.T, 0, -1):
            eps = predictor(P, x, cond, np.full(B, float(t))).data
            beta = sched.betas[t - 1]
            ab = sched.alpha_bar(t)
            if clip_sample:
                ab_prev = sched.alpha_bar(t - 1)
                x0 = np.clip((x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab), -1.0, 1.0)
                x = (np.sqrt(ab_prev) * beta * x0 + np.sqrt(sched.alphas[t - 1]) * (1.0 - ab_prev) * x) / (1.0 - ab)
            else:
                x = (x - (beta / np.sqrt(1.0 - ab)) * eps) / np.sqrt(sched.alphas[t - 1])
            if t > 1:
                sigma = np.sqrt(sched.posterior_variance(t))
                z = np.stack([r.standard_normal(block_shape) for r in rngs])
                x = x + sigma * z
    return x


# --------------------------------------------------------------------------
# training


def prepare_training_data(policy: DiffusionPolicy, episodes) -> tuple[np.ndarray, np.ndarray]:
    """All windows of all episodes, as (cond (N, C), normalized actions (N, H, A))."""
    c = policy.cfg
    hists, acts = [], []
    for ep in episodes:
        obs = np.asarray(ep.obs, dtype=float)
        if obs.shape[1] != c.obs_dim:
            raise ValueError(f"episode observations have width {obs.shape[1]}, expected {c.obs_dim}")
        h, a = stack_windows(build_training_windows(obs, ep.actions, c.obs_horizon, c.pred_horizon))
        hists.append(h)
        acts.append(a)
    hist = np.concatenate(hists)
    return policy.condition(hist), policy.action_norm.normalize(np.concatenate(acts))


def train_step(
    predictor: NoisePredictor,
    store: ParamStore,
    cond: np.ndarray,
    actions: np.ndarray,
    schedule: DiffusionSchedule,
    adam: AdamConfig,
    rng: np.random.Generator,
) -> float:
    """One noise-prediction regression step on a batch of (cond, normalized action block)."""
    B = len(actions)
    if B == 0:
        raise ValueError("empty batch")
    t = rng.integers(1, schedule.T + 1, size=B)
    eps = rng.standard_normal(actions.shape)
    x_t = add_noise(actions, eps, t, schedule)
    P = store.leaves()
    loss = ag.mse(predictor(P, Tensor(x_t), Tensor(cond), t.astype(float)), eps)
    value = float(loss.data)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite diffusion loss")
    grads = backward(loss, P)
    adam_step(store, grads, adam)
    return value


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)  # {"iteration", "mean_success_rate"}


def train_policy(
    policy: DiffusionPolicy,
    episodes,
    iterations: int,
    rng: np.random.Generator,
    validate: Callable[[DiffusionPolicy, int], float] | None = None,
    validate_every: int = 500,
) -> TrainLog:
    cond, acts = prepare_training_data(policy, episodes)
    adam = AdamConfig(lr=policy.cfg.lr)
    pred = policy.predictor()
    out = TrainLog()
    n = len(acts)
    bs = policy.cfg.batch_size
    decay = policy.cfg.ema_decay
    if decay > 0 and policy.ema is None:
        policy.ema = policy.store.copy()
    for it in range(1, iterations + 1):
        idx = rng.integers(0, n, size=bs)
        out.losses.append(train_step(pred, policy.store, cond[idx], acts[idx], policy.schedule, adam, rng))
        if policy.ema is not None:
            # short warm-up so early averages are not dominated by the init
            d = min(decay, (1.0 + policy.store.step) / (10.0 + policy.store.step))
            for k, v in policy.store.params.items():
                policy.ema.params[k] += (1.0 - d) * (v - policy.ema.params[k])
        if validate is not None and (it % validate_every == 0 or it == iterations):
            if not out.validation or out.validation[-1]["iteration"] != it:
                out.validation.append({"iteration": it, "mean_success_rate": float(validate(policy, it))})
    return out


# --------------------------------------------------------------------------
# receding-horizon execution


@dataclass(frozen=True)
class EnvSetup:
    arm_joints: np.ndarray
    rel_pose: Pose2
    shape: ObjectShape


@dataclass
class PolicyRollout:
    actions: np.ndarray  # executed absolute hand targets, (steps, 6)
    latencies: list[float]
    reward: int
    aborted: bool = False


def rollout_batch(
    policy: DiffusionPolicy,
    setups: Sequence[EnvSetup],
    hand: HandModel,
    params: SimParams,
    rngs: Sequence[np.random.Generator],
    step_cap: int,
    clamp: float = 0.0025,
    predictor: NoisePredictor | None = None,
) -> list[PolicyRollout]:
    """Run several independent receding-horizon rollouts, batching the denoiser calls."""
    c = policy.cfg
    n = len(setups)
    if len(rngs) != n:
        raise ValueError("need one rng per setup")
    qs, poses, inits, aborted = [], [], [], []
    for s in setups:
        pl = place(hand, s.arm_joints, s.rel_pose, s.shape, params.contact_eps)
        qs.append(pl.joints.copy())
        poses.append(pl.object_pose)
        inits.append((pl.object_pose.x, pl.object_pose.y))
        aborted.append(pl.collided)
    history = [[build_observation(qs[i], poses[i], inits[i], hand, None, "diffusion")] for i in range(n)]
    executed = [[] for _ in range(n)]
    latencies = [[] for _ in range(n)]
    lo, hi = hand.hand_limits[:, 0], hand.hand_limits[:, 1]
    steps = 0
    while steps < step_cap:
        obs_hist = np.stack([_history_window(h, c.obs_horizon) for h in history])
        t0 = time.perf_counter()
        blocks = policy.sample(obs_hist, rngs, predictor)
        dt = (time.perf_counter() - t0) / n
        n_exec = min(c.exec_horizon, step_cap - steps)
        for i in range(n):
            latencies[i].append(dt)
            for k in range(n_exec):
                a = blocks[i, k]
                q = qs[i].copy()
                cur = q[N_ARM:]
                q[N_ARM:] = np.clip(cur + np.clip(a - cur, -clamp, clamp), lo, hi)
                qs[i] = q
                executed[i].append(a)
                history[i].append(build_observation(q, poses[i], inits[i], hand, None, "diffusion"))
        steps += n_exec
    out = []
    for i, s in enumerate(setups):
        if aborted[i]:
            reward = -1
        else:
            reward = drop_test_full(WorldState(qs[i], poses[i], s.shape), hand, 0.0, params).reward
        out.append(PolicyRollout(np.array(executed[i]), latencies[i], reward, aborted[i]))
    return out


def _history_window(history: list, k: int) -> np.ndarray:
    """Last k observations, duplicating the first one when fewer exist."""
    h = history[-k:]
    return np.stack([h[0]] * (k - len(h)) + h)


def receding_horizon_rollout(
    policy: DiffusionPolicy,
    setup: EnvSetup,
    hand: HandModel,
    params: SimParams,
    rng: np.random.Generator,
    step_cap: int,
    clamp: float = 0.0025,
    predictor: NoisePredictor | None = None,
) -> PolicyRollout:
    return rollout_batch(policy, [setup], hand, params, [rng], step_cap, clamp, predictor)[0]
