"""Forward (noising) process and training-tuple draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .param import expand
from .schedule import Schedule

PRNG_ALGORITHM = "numpy.random.Generator(PCG64) seeded via SeedSequence"


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent PCG64 stream keyed by ``(seed, *stream)``."""
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])


@dataclass(frozen=True)
class TrainingPair:
    x0: np.ndarray
    eps: np.ndarray
    t: np.ndarray
    xt: np.ndarray
    control: np.ndarray | None = None


def noise(x0: np.ndarray, t, eps: np.ndarray, s: Schedule) -> np.ndarray:
    """``alpha(t) * x0 + sigma(t) * eps``; ``t`` may be scalar or one value per sample."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("t must lie in [0, 1]")
    return expand(s.alpha(t), x0.ndim) * x0 + expand(s.sigma(t), x0.ndim) * eps


def sample_time(rng: np.random.Generator, s: Schedule, size=None, dist: str = "uniform"):
    """Draw t uniformly on the schedule's clip range."""
    if dist != "uniform":
        raise ValueError(f"unsupported time distribution {dist!r}")
    return rng.uniform(s.t_min, s.t_max, size=size)


def draw_pair(
    rng: np.random.Generator, x0: np.ndarray, s: Schedule, control: np.ndarray | None = None
) -> TrainingPair:
    """Draw (t, eps) for a batch of clean samples; t first, then eps, from one stream."""
    x0 = np.asarray(x0, dtype=np.float64)
    t = sample_time(rng, s, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape)
    return TrainingPair(x0=x0, eps=eps, t=t, xt=noise(x0, t, eps, s), control=control)
