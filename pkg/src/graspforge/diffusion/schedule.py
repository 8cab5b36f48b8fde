"""Cosine noise schedule and the DDPM forward/reverse updates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    """Arrays indexed by step t = 1..T at position t - 1."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def posterior_variance(self, t: int) -> float:
        """beta_t (1 - abar_{t-1}) / (1 - abar_t)."""
        return float(self.betas[t - 1] * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)))


def cosine_f(t, T: int, s: float = 0.008):
    return np.cos(((np.asarray(t, dtype=float) / T + s) / (1.0 + s)) * math.pi / 2) ** 2


def cosine_schedule(T: int = 50, max_beta: float = 0.999) -> DiffusionSchedule:
    if T < 2:
        raise ValueError(f"need T >= 2, got {T}")
    f = cosine_f(np.arange(T + 1), T)
    ratio = f / f[0]
    betas = np.minimum(1.0 - ratio[1:] / ratio[:-1], max_beta)
    alphas = 1.0 - betas
    return DiffusionSchedule(T, betas, alphas, np.cumprod(alphas))


def add_noise(x0, eps, t, schedule: DiffusionSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; t scalar or per-sample (batch first)."""
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {eps.shape}")
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"t must lie in [1, {schedule.T}]")
    ab = schedule.alpha_bars[t - 1]
    if ab.ndim:
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def reverse_step(x_t, eps_hat, t: int, schedule: DiffusionSchedule, z=None) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1}; `z` is ignored at t = 1."""
    beta = schedule.betas[t - 1]
    alpha = schedule.alphas[t - 1]
    ab = schedule.alpha_bar(t)
    mean = (x_t - (beta / math.sqrt(1.0 - ab)) * eps_hat) / math.sqrt(alpha)
    if t > 1 and z is not None:
        mean = mean + math.sqrt(schedule.posterior_variance(t)) * z
    return mean
