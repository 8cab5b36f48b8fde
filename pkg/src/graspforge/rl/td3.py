"""TD3 agent for one-step residual corrections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import autograd as ag
from ..nn.autograd import Tensor, backward, no_grad
from ..nn.models import init_mlp, mlp_forward
from ..nn.params import AdamConfig, ParamStore, adam_step, polyak_update
from .env import OBS_DIM_RL


@dataclass(frozen=True)
class TD3Config:
    hidden: int = 256
    r_max: float = 0.15
    gamma: float = 0.99
    tau: float = 0.005
    policy_noise: float = 0.2  # target smoothing, in units of r_max
    noise_clip: float = 0.5
    policy_delay: int = 2
    batch_size: int = 256
    buffer_size: int = 50_000
    lr: float = 3e-4
    explore_noise: float = 0.1  # radians
    updates_per_episode: int = 1


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def add(self, obs, act, reward, next_obs, done) -> None:
        i = self.inserted % self.capacity
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.inserted += 1

    def sample(self, rng: np.random.Generator, n: int):
        if len(self) == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self), size=n)
        return self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.done[idx]


def td3_target(reward, done, gamma: float, q1_next, q2_next) -> np.ndarray:
    """y = r + gamma (1 - done) min(Q1', Q2'); terminal rows ignore the critics."""
    reward = np.asarray(reward, dtype=float)
    done = np.asarray(done, dtype=float)
    boot = np.minimum(q1_next, q2_next)
    return reward + gamma * np.where(done > 0, 0.0, boot)


class TD3Agent:
    def __init__(self, cfg: TD3Config, rng: np.random.Generator, obs_dim: int = OBS_DIM_RL, act_dim: int = 6):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        h = cfg.hidden
        self.actor = ParamStore()
        init_mlp(self.actor, "pi", (obs_dim, h, h, h, act_dim), rng)
        self.critic = ParamStore()
        for name in ("q1", "q2"):
            init_mlp(self.critic, name, (obs_dim + act_dim, h, h, h, 1), rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.critic_steps = 0
        self.adam = AdamConfig(lr=cfg.lr)

    # -- inference

    def _pi(self, P, obs):
        return mlp_forward(P, "pi", obs, head="tanh", bound=self.cfg.r_max)

    def _q(self, P, name, obs, act):
        x = ag.concat([obs if isinstance(obs, Tensor) else Tensor(obs), act * (1.0 / self.cfg.r_max)], axis=1)
        return mlp_forward(P, name, x)

    def act(self, obs) -> np.ndarray:
        with no_grad():
            P = {k: Tensor(v) for k, v in self.actor.params.items()}
            out = self._pi(P, np.asarray(obs, dtype=float)[None, :])
        return out.data[0].copy()

    def policy(self, noise: float = 0.0, rng: np.random.Generator | None = None):
        def fn(obs):
            a = self.act(obs)
            if noise > 0:
                a = a + rng.normal(0.0, noise, size=a.shape)
            return np.clip(a, -self.cfg.r_max, self.cfg.r_max)

        return fn

    # -- learning

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> dict:
        cfg = self.cfg
        if len(buffer) < cfg.batch_size:
            raise ValueError(f"buffer holds {len(buffer)} < batch size {cfg.batch_size}")
        s, a, r, s2, d = buffer.sample(rng, cfg.batch_size)
        r_max = cfg.r_max

        with no_grad():
            PT = {k: Tensor(v) for k, v in self.actor_target.params.items()}
            QT = {k: Tensor(v) for k, v in self.critic_target.params.items()}
            noise = np.clip(rng.normal(0.0, cfg.policy_noise * r_max, size=a.shape), -cfg.noise_clip * r_max, cfg.noise_clip * r_max)
            a2 = np.clip(self._pi(PT, s2).data + noise, -r_max, r_max)
            q1n = self._q(QT, "q1", s2, Tensor(a2)).data[:, 0]
            q2n = self._q(QT, "q2", s2, Tensor(a2)).data[:, 0]
        y = td3_target(r, d, cfg.gamma, q1n, q2n)[:, None]

        C = self.critic.leaves()
        at = Tensor(a)
        critic_loss = ag.mse(self._q(C, "q1", s, at), y) + ag.mse(self._q(C, "q2", s, at), y)
        if not np.isfinite(critic_loss.data):
            raise FloatingPointError("non-finite critic loss")
        adam_step(self.critic, backward(critic_loss, C), self.adam)
        self.critic_steps += 1
        out = {"critic_loss": float(critic_loss.data)}

        if self.critic_steps % cfg.policy_delay == 0:
            A = self.actor.leaves()
            Cq = {k: Tensor(v) for k, v in self.critic.params.items() if k.startswith("q1.")}
            actor_loss = -ag.mean(self._q(Cq, "q1", s, self._pi(A, s)))
            if not np.isfinite(actor_loss.data):
                raise FloatingPointError("non-finite actor loss")
            adam_step(self.actor, backward(actor_loss, A), self.adam)
            polyak_update(self.actor_target, self.actor, cfg.tau)
            polyak_update(self.critic_target, self.critic, cfg.tau)
            out["actor_loss"] = float(actor_loss.data)
        return out
