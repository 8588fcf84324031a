"""Variance-preserving noise schedules indexed by integer timestep 0..T."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    kind: str
    alpha: np.ndarray   # (T + 1,) signal scale
    sigma: np.ndarray   # (T + 1,) noise scale

    def __post_init__(self):
        self.alpha.setflags(write=False)
        self.sigma.setflags(write=False)

    def to_dict(self) -> dict:
        return {"T": self.T, "kind": self.kind}


def _cosine_alphabar(T: int, s: float = 0.008) -> np.ndarray:
    t = np.arange(T + 1) / T
    f = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2
    raw = f / f[0]
    betas = np.minimum(1.0 - raw[1:] / raw[:-1], 0.999)
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


def _linear_alphabar(T: int, beta0: float = 0.1, beta1: float = 20.0) -> np.ndarray:
    # continuous-time linear beta, integrated exactly
    t = np.arange(T + 1) / T
    return np.exp(-(beta0 * t + 0.5 * (beta1 - beta0) * t * t))


def make_schedule(T: int, kind: str = "cosine") -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if kind == "cosine":
        abar = _cosine_alphabar(T)
    elif kind == "linear":
        abar = _linear_alphabar(T)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    abar[0] = 1.0
    alpha = np.sqrt(abar)
    sigma = np.sqrt(1.0 - abar)
    return NoiseSchedule(T=T, kind=kind, alpha=alpha, sigma=sigma)


def sampling_timesteps(T: int, steps: int) -> list:
    """Strictly decreasing integer timesteps from T to 0 (``steps`` jumps)."""
    steps = max(1, min(int(steps), T))
    ts = np.unique(np.round(np.linspace(0, T, steps + 1)).astype(int))[::-1]
    return [int(t) for t in ts]
