"""Conversions between eps-, x0-, v- and u-predictions, and the implied loss weights.

Every kind is a fixed linear combination of the clean sample and the noise,
given the interpolant ``x_t = alpha * x0 + sigma * eps``::

    x0  = x0
    eps = eps
    v   = alpha * eps - sigma * x0           (variance-preserving schedules only)
    u   = alpha_dot * x0 + sigma_dot * eps   (conditional flow velocity)

so any prediction can be mapped to any other by passing through the x0 estimate.
All maps are pure and elementwise; inputs are never modified.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import SingularConversionError, VPRequiredError
from .schedule import Schedule, dlog_snr_dt

KINDS = ("eps", "x0", "v", "u")
WEIGHT_KINDS = ("w_eps", "w_v", "w_u", "w_x0", "w_eps_to_v", "w_u_to_eps")
SINGULAR_TOL = 1e-12
VP_TOL = 1e-10

Time = Union[float, np.ndarray]


@dataclass(frozen=True)
class Prediction:
    """A model output of a given kind, tied to the noisy state it was computed from.

    ``t`` is a scalar or an array with one entry per leading-axis sample.
    """

    kind: str
    value: np.ndarray
    t: Time
    state: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown prediction kind {self.kind!r}")
        value = np.asarray(self.value, dtype=np.float64)
        state = np.asarray(self.state, dtype=np.float64)
        if value.shape != state.shape:
            raise ValueError(f"value shape {value.shape} != state shape {state.shape}")
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "state", state)


def expand(coef, ndim: int) -> np.ndarray:
    """Reshape a per-sample coefficient so it broadcasts over trailing axes."""
    coef = np.asarray(coef, dtype=np.float64)
    if coef.ndim == 0:
        return coef
    return coef.reshape(coef.shape + (1,) * (ndim - coef.ndim))


def _require_vp(s: Schedule) -> None:
    if not s.vp:
        raise VPRequiredError(f"v-parameterization needs a variance-preserving schedule, got {s.name!r}")


def _nonsingular(den: np.ndarray, what: str) -> None:
    if np.any(np.abs(den) < SINGULAR_TOL):
        raise SingularConversionError(f"{what} is below {SINGULAR_TOL:g} in magnitude")


class _Coefs:
    """Schedule quantities at time t, broadcast to the value's rank."""

    def __init__(self, s: Schedule, t: Time, ndim: int, derivs: bool = False):
        t = s.check_time(t)
        self.alpha = expand(s.alpha(t), ndim)
        self.sigma = expand(s.sigma(t), ndim)
        if derivs:
            self.alpha_dot = expand(s.alpha_dot(t), ndim)
            self.sigma_dot = expand(s.sigma_dot(t), ndim)


def precondition_coeffs(s: Schedule, t: Time) -> tuple[np.ndarray, np.ndarray]:
    """``(c_skip, c_out) = (1 / alpha, -sigma / alpha)`` so that ``x0 = c_skip x_t + c_out eps``."""
    t = s.check_time(t)
    alpha, sigma = s.alpha(t), s.sigma(t)
    _nonsingular(alpha, "alpha(t)")
    return 1.0 / alpha, -sigma / alpha


def _x0_from(kind: str, value: np.ndarray, x_t: np.ndarray, s: Schedule, t: Time) -> np.ndarray:
    if kind == "x0":
        return value
    if kind == "eps":
        c_skip, c_out = precondition_coeffs(s, t)
        return expand(c_skip, value.ndim) * x_t + expand(c_out, value.ndim) * value
    if kind == "v":
        _require_vp(s)
        c = _Coefs(s, t, value.ndim)
        return c.alpha * x_t - c.sigma * value
    c = _Coefs(s, t, value.ndim, derivs=True)
    den = c.alpha_dot * c.sigma - c.alpha * c.sigma_dot
    _nonsingular(den, "alpha_dot*sigma - alpha*sigma_dot")
    return (c.sigma * value - c.sigma_dot * x_t) / den


def _from_x0(kind: str, x0: np.ndarray, x_t: np.ndarray, s: Schedule, t: Time) -> np.ndarray:
    if kind == "x0":
        return x0
    if kind == "v":
        _require_vp(s)
    c = _Coefs(s, t, x0.ndim, derivs=(kind == "u"))
    _nonsingular(c.sigma, "sigma(t)")
    if kind == "eps":
        return (x_t - c.alpha * x0) / c.sigma
    if kind == "v":
        eps = (x_t - c.alpha * x0) / c.sigma
        return c.alpha * eps - c.sigma * x0
    return ((c.alpha_dot * c.sigma - c.alpha * c.sigma_dot) / c.sigma) * x0 + (c.sigma_dot / c.sigma) * x_t


def to_x0(p: Prediction, s: Schedule) -> Prediction:
    """Exact x0 estimate implied by ``p``; returns ``p`` itself when it is already x0."""
    if p.kind == "x0":
        s.check_time(p.t)
        return p
    return Prediction("x0", _x0_from(p.kind, p.value, p.state, s, p.t), p.t, p.state)


def convert(p: Prediction, target: str, s: Schedule) -> Prediction:
    """Re-express ``p`` as a prediction of kind ``target`` at the same (x_t, t)."""
    if target not in KINDS:
        raise ValueError(f"unknown prediction kind {target!r}")
    if "v" in (p.kind, target):
        _require_vp(s)
    if target == p.kind:
        s.check_time(p.t)
        return p
    x0 = to_x0(p, s).value
    return Prediction(target, _from_x0(target, x0, p.state, s, p.t), p.t, p.state)


def _to_x0_gain(kind: str, s: Schedule, t: Time) -> np.ndarray:
    t = s.check_time(t)
    alpha, sigma = s.alpha(t), s.sigma(t)
    if kind == "x0":
        return np.ones_like(t)
    if kind == "eps":
        _nonsingular(alpha, "alpha(t)")
        return -sigma / alpha
    if kind == "v":
        return -sigma
    den = s.alpha_dot(t) * sigma - alpha * s.sigma_dot(t)
    _nonsingular(den, "alpha_dot*sigma - alpha*sigma_dot")
    return sigma / den


def _from_x0_gain(kind: str, s: Schedule, t: Time) -> np.ndarray:
    t = s.check_time(t)
    alpha, sigma = s.alpha(t), s.sigma(t)
    if kind == "x0":
        return np.ones_like(t)
    _nonsingular(sigma, "sigma(t)")
    if kind == "eps":
        return -alpha / sigma
    if kind == "v":
        return -(alpha * alpha + sigma * sigma) / sigma
    return (s.alpha_dot(t) * sigma - alpha * s.sigma_dot(t)) / sigma


def conversion_gain(source: str, target: str, s: Schedule, t: Time) -> np.ndarray:
    """Derivative of ``convert(., target)`` with respect to the source value.

    Conversions are affine in the predicted value at fixed (x_t, t), so this
    per-sample scalar is all a backward pass needs.
    """
    if "v" in (source, target):
        _require_vp(s)
    if source == target:
        return np.ones_like(s.check_time(t))
    return _to_x0_gain(source, s, t) * _from_x0_gain(target, s, t)


def target_value(kind: str, x0: np.ndarray, eps: np.ndarray, s: Schedule, t: Time) -> np.ndarray:
    """Ground-truth regression target of ``kind`` for a forward-process pair."""
    if kind == "x0":
        return x0
    if kind == "eps":
        return eps
    if kind == "v":
        _require_vp(s)
        c = _Coefs(s, t, x0.ndim)
        return c.alpha * eps - c.sigma * x0
    if kind == "u":
        c = _Coefs(s, t, x0.ndim, derivs=True)
        return c.alpha_dot * x0 + c.sigma_dot * eps
    raise ValueError(f"unknown prediction kind {kind!r}")


def v_from_eps_teacher(eps_hat: np.ndarray, x0: np.ndarray, s: Schedule, t: Time) -> np.ndarray:
    """v built from an eps-prediction with the *true* x0: ``alpha * eps_hat - sigma * x0``.

    This is how a v-loss is usually bolted onto an eps-network. Its error is
    ``alpha * (eps - eps_hat)``, so the loss carries the weight ``alpha**4 / sigma**2``
    rather than the ``1 / sigma**2`` of an exact conversion.
    """
    _require_vp(s)
    c = _Coefs(s, t, np.ndim(eps_hat))
    return c.alpha * eps_hat - c.sigma * x0


def v_teacher_residual(eps_hat: np.ndarray, eps: np.ndarray, s: Schedule, t: Time) -> np.ndarray:
    """``v - v_from_eps_teacher(eps_hat, x0)`` in the cancellation-free form ``alpha (eps - eps_hat)``.

    Forming both v's and subtracting loses about ``log10(1 / alpha**2)`` digits
    as alpha goes to 0.
    """
    _require_vp(s)
    c = _Coefs(s, t, np.ndim(eps_hat))
    return c.alpha * (eps - eps_hat)


def weight(kind: str, s: Schedule, t: Time, form: str = "direct") -> np.ndarray:
    """Per-time weight ``w`` such that the loss equals ``w * ||x0 - x0_hat||**2``.

    ``form`` only matters for ``w_u``: ``"direct"`` evaluates
    ``((alpha_dot sigma - alpha sigma_dot) / sigma)**2`` and ``"log_snr"`` evaluates
    ``alpha**2 / 4 * (d log SNR / dt)**2``.
    """
    t = s.check_time(t)
    alpha, sigma = s.alpha(t), s.sigma(t)
    if kind == "w_x0":
        return np.ones_like(t)
    _nonsingular(sigma, "sigma(t)")
    if kind == "w_eps":
        return alpha * alpha / (sigma * sigma)
    if kind == "w_v":
        _require_vp(s)
        return 1.0 / (sigma * sigma)
    if kind == "w_u":
        if form == "direct":
            r = (s.alpha_dot(t) * sigma - alpha * s.sigma_dot(t)) / sigma
            return r * r
        if form == "log_snr":
            d = dlog_snr_dt(s, t)
            return 0.25 * alpha * alpha * d * d
        raise ValueError(f"unknown w_u form {form!r}")
    if kind == "w_eps_to_v":
        _require_vp(s)
        return alpha**4 / (sigma * sigma)
    if kind == "w_u_to_eps":
        return alpha * alpha / (sigma * sigma)
    raise ValueError(f"unknown weight kind {kind!r}")
