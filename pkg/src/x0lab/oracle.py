"""Closed-form posterior-mean denoiser for Gaussian data.

For ``x0 ~ N(mu, Sigma)`` and ``x_t = alpha x0 + sigma eps`` the posterior mean is

    E[x0 | x_t] = mu + alpha Sigma (alpha^2 Sigma + sigma^2 I)^-1 (x_t - alpha mu)

which is the optimal x0-predictor. It validates samplers without any training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IllConditionedError
from .param import Prediction, convert, expand
from .schedule import Schedule

MAX_COND = 1e12
DENSE_MAX_DIM = 64


@dataclass(frozen=True)
class GaussianData:
    """Gaussian prior. ``cov`` is a 1-D array of variances (diagonal) or a dense matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.cov, dtype=np.float64)
        d = mean.shape[0]
        if cov.ndim == 1:
            if cov.shape != (d,) or np.any(cov <= 0):
                raise ValueError("diagonal covariance must be positive with one entry per dimension")
        elif cov.ndim == 2:
            if cov.shape != (d, d):
                raise ValueError(f"covariance shape {cov.shape} does not match mean dimension {d}")
            if d > DENSE_MAX_DIM:
                raise ValueError(f"dense covariance supported up to d={DENSE_MAX_DIM}")
            if np.max(np.abs(cov - cov.T)) > 1e-12:
                raise ValueError("covariance is not symmetric")
            if np.min(np.linalg.eigvalsh(cov)) <= 0:
                raise ValueError("covariance is not positive definite")
        else:
            raise ValueError("covariance must be 1-D (diagonal) or 2-D")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def diagonal(self) -> bool:
        return self.cov.ndim == 1

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def variances(self) -> np.ndarray:
        return self.cov if self.diagonal else np.diag(self.cov)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        if self.diagonal:
            return self.mean + z * np.sqrt(self.cov)
        return self.mean + z @ np.linalg.cholesky(self.cov).T


def _marginal(d: GaussianData, s: Schedule, t, ndim: int = 1):
    t = s.check_time(t)
    if t.ndim and not d.diagonal:
        raise ValueError("per-sample times are only supported for diagonal covariances")
    alpha, sigma = expand(s.alpha(t), ndim), expand(s.sigma(t), ndim)
    if d.diagonal:
        var = alpha * alpha * d.cov + sigma * sigma
        cond = np.max(var.max(axis=-1) / var.min(axis=-1))
    else:
        alpha, sigma = float(alpha), float(sigma)
        var = alpha * alpha * d.cov + sigma * sigma * np.eye(d.dim)
        cond = np.linalg.cond(var)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise IllConditionedError(f"marginal covariance condition number {cond:.3g} exceeds {MAX_COND:g}")
    return alpha, sigma, var


def posterior_mean(d: GaussianData, x_t: np.ndarray, t, s: Schedule) -> Prediction:
    """Exact ``E[x0 | x_t]`` for ``x_t`` of shape ``(d,)`` or ``(n, d)``.

    ``t`` is a scalar, or (diagonal covariance only) one time per row.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    alpha, _, var = _marginal(d, s, t, x_t.ndim)
    r = x_t - alpha * d.mean
    if d.diagonal:
        x0 = d.mean + (alpha * d.cov / var) * r
    else:
        # row-wise solve: (Sigma C^-1 r^T)^T
        x0 = d.mean + alpha * np.linalg.solve(var, r.T).T @ d.cov.T
    return Prediction("x0", x0, t, x_t)


def marginal_score(d: GaussianData, x_t: np.ndarray, t, s: Schedule) -> np.ndarray:
    """Score of the noisy marginal ``N(alpha mu, alpha^2 Sigma + sigma^2 I)`` at ``x_t``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    alpha, _, var = _marginal(d, s, t, x_t.ndim)
    r = x_t - alpha * d.mean
    if d.diagonal:
        return -r / var
    return -np.linalg.solve(var, r.T).T


def make_predictor(d: GaussianData, s: Schedule, kind: str = "x0"):
    """Wrap the oracle as ``f(x, t, control) -> Prediction`` of the requested kind."""
    def predictor(x, t, control=None):
        p = posterior_mean(d, x, t, s)
        return p if kind == "x0" else convert(p, kind, s)

    return predictor
