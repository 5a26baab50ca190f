"""DDIM / DDPM / Euler-flow samplers that all go through the x0 estimate.

A predictor is any callable ``f(x, t, control) -> Prediction`` where ``t`` is a
scalar shared by the whole batch. The DDIM/DDPM update is

    x_prev = alpha_prev * x0_hat + sqrt(sigma_prev**2 - gamma**2) * eps_hat + gamma * z

with ``gamma = 0`` for DDIM and
``gamma = sigma_prev / sigma * sqrt(1 - alpha**2 / alpha_prev**2)`` for DDPM.
The flow sampler integrates ``dx/dt = u(x, t)`` backwards with explicit Euler.

The time grid is :func:`~x0lab.schedule.discrete_grid` with its final entry
moved to ``t = 0``, so the last update lands exactly on ``x0_hat`` (alpha = 1,
sigma = 0) without a special case. The predictor is never queried at t = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GammaOverflowError
from .forward import make_rng
from .param import Prediction, convert, to_x0
from .schedule import Schedule, discrete_grid

SAMPLER_KINDS = ("ddim", "ddpm", "euler_flow")
GAMMA_TOL = 1e-12


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ddim"
    n_steps: int = 50
    eta_mode: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        mode = self.eta_mode or ("ddpm_gamma" if self.kind == "ddpm" else "deterministic")
        if mode not in ("deterministic", "ddpm_gamma"):
            raise ValueError(f"unknown eta_mode {mode!r}")
        if self.kind == "ddim" and mode != "deterministic":
            raise ValueError("ddim is deterministic (gamma = 0)")
        object.__setattr__(self, "eta_mode", mode)


def sampling_times(s: Schedule, n_steps: int) -> np.ndarray:
    times = discrete_grid(s, n_steps)
    times[-1] = 0.0
    return times


def ddpm_gamma(s: Schedule, t: float, t_prev: float) -> float:
    a, sg = float(s.alpha(t)), float(s.sigma(t))
    a_prev, sg_prev = float(s.alpha(t_prev)), float(s.sigma(t_prev))
    if sg_prev == 0.0:
        return 0.0
    return sg_prev / sg * math.sqrt(max(1.0 - (a * a) / (a_prev * a_prev), 0.0))


def reverse_step(
    x_t: np.ndarray,
    pred: Prediction,
    t: float,
    t_prev: float,
    cfg: SamplerConfig,
    s: Schedule,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One update from ``t`` to ``t_prev < t``.

    ``noise`` is the standard-normal draw for the stochastic term; it is only
    read when gamma > 0.
    """
    if not t_prev < t:
        raise ValueError(f"t_prev={t_prev} must be smaller than t={t}")
    if not (0.0 <= t_prev and t <= 1.0):
        raise ValueError("times must lie in [0, 1]")
    if cfg.kind == "euler_flow":
        u = convert(pred, "u", s).value
        return x_t - (t - t_prev) * u

    x0_hat = to_x0(pred, s).value
    eps_hat = convert(pred, "eps", s).value
    a_prev, sg_prev = float(s.alpha(t_prev)), float(s.sigma(t_prev))
    gamma = ddpm_gamma(s, t, t_prev) if cfg.eta_mode == "ddpm_gamma" else 0.0
    rem = sg_prev * sg_prev - gamma * gamma
    if rem < -GAMMA_TOL:
        raise GammaOverflowError(
            f"gamma^2={gamma * gamma:.6g} exceeds sigma_prev^2={sg_prev * sg_prev:.6g} at t={t}, t_prev={t_prev}"
        )
    out = a_prev * x0_hat + math.sqrt(max(rem, 0.0)) * eps_hat
    if gamma > 0.0:
        if noise is None:
            raise ValueError("stochastic step needs a noise draw")
        out = out + gamma * noise
    return out


def chain_noise(seed: int, n_chains: int, n_steps: int, sample_shape: tuple[int, ...]) -> np.ndarray:
    """Per-chain draws, shape ``(n_steps + 1, n_chains, *sample_shape)``.

    Chain ``i`` uses its own stream ``(seed, i)``; row 0 is the initial state and
    row ``k`` the noise for update ``k``. Chains are independent of batch size.
    """
    out = np.empty((n_steps + 1, n_chains) + tuple(sample_shape))
    for i in range(n_chains):
        out[:, i] = make_rng(seed, i).standard_normal((n_steps + 1,) + tuple(sample_shape))
    return out


def sample(predictor, cfg: SamplerConfig, s: Schedule, shape, control=None, return_trajectory: bool = False):
    """Run a chain per leading-axis row of ``shape`` from ``t_max`` down to ``t = 0``."""
    shape = tuple(int(n) for n in shape)
    times = sampling_times(s, cfg.n_steps)
    draws = chain_noise(cfg.seed, shape[0], cfg.n_steps, shape[1:])
    x = draws[0]
    traj = [x]
    for k in range(cfg.n_steps):
        t, t_prev = float(times[k]), float(times[k + 1])
        pred = predictor(x, t, control)
        x = reverse_step(x, pred, t, t_prev, cfg, s, noise=draws[k + 1])
        if return_trajectory:
            traj.append(x)
    if return_trajectory:
        return x, np.stack(traj)
    return x
