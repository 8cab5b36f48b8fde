"""Training windows with boundary duplication, and per-dimension normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrainingWindow:
    obs_history: np.ndarray  # (obs_horizon, obs_dim)
    actions: np.ndarray  # (pred_horizon, action_dim)


def window_indices(length: int, start: int, obs_horizon: int, pred_horizon: int):
    """Clamped source indices for one window: history ends at `start`."""
    obs_idx = [min(max(start - obs_horizon + 1 + k, 0), length - 1) for k in range(obs_horizon)]
    act_idx = [min(start + k, length - 1) for k in range(pred_horizon)]
    return obs_idx, act_idx


def build_training_windows(obs, actions, obs_horizon: int = 2, pred_horizon: int = 8) -> list[TrainingWindow]:
    obs = np.asarray(obs, dtype=float)
    actions = np.asarray(actions, dtype=float)
    n = len(obs)
    if n < 1 or len(actions) != n:
        raise ValueError(f"episode needs >= 1 step and matching obs/actions, got {len(obs)}/{len(actions)}")
    out = []
    for t in range(n):
        oi, ai = window_indices(n, t, obs_horizon, pred_horizon)
        out.append(TrainingWindow(obs[oi], actions[ai]))
    return out


def stack_windows(windows) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.stack([w.obs_history for w in windows]),
        np.stack([w.actions for w in windows]),
    )


@dataclass(frozen=True)
class MinMaxNormalizer:
    """Maps each dimension's [lo, hi] onto [-1, 1]; flat dimensions map to 0."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, data) -> MinMaxNormalizer:
        d = np.asarray(data, dtype=float).reshape(-1, np.shape(data)[-1])
        return cls(d.min(axis=0), d.max(axis=0))

    @property
    def span(self) -> np.ndarray:
        s = self.hi - self.lo
        return np.where(s > 0, s, 1.0)

    def normalize(self, x):
        return 2.0 * (np.asarray(x, dtype=float) - self.lo) / self.span - 1.0

    def denormalize(self, x):
        return (np.asarray(x, dtype=float) + 1.0) * 0.5 * self.span + self.lo

    def to_json(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_json(cls, d) -> MinMaxNormalizer:
        return cls(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))


@dataclass(frozen=True)
class StandardNormalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data) -> StandardNormalizer:
        d = np.asarray(data, dtype=float).reshape(-1, np.shape(data)[-1])
        std = d.std(axis=0)
        return cls(d.mean(axis=0), np.where(std > 1e-8, std, 1.0))

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, d) -> StandardNormalizer:
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))
