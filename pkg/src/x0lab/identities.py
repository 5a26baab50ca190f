"""Randomized checks of the parameterization algebra.

Each check draws random ``(x0, eps, t, x0_hat)`` instances, evaluates both sides
of an identity and reports the worst relative error. Used by the
``identity-check`` command and by the test-suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import TrainingPair, make_rng, noise
from .param import KINDS, Prediction, convert, target_value, v_from_eps_teacher, v_teacher_residual, weight
from .schedule import Schedule, snr
from .toytrainer import TrainConfig, grad, init_params

DIM = 8
_TINY = 1e-300
TEACHER_TOL_SCALE = 1e3


@dataclass(frozen=True)
class IdentityResult:
    name: str
    worst: float
    n: int
    tol_scale: float = 1.0

    def ok(self, tol: float) -> bool:
        return self.worst <= tol * self.tol_scale


def rel_err(a, b) -> np.ndarray:
    """Elementwise ``|a - b| / max(|a|, |b|)``; zero when both sides are zero."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = np.maximum(np.abs(a), np.abs(b))
    return np.where(scale > _TINY, np.abs(a - b) / np.maximum(scale, _TINY), 0.0)


def _row_rel_err(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-row ``||a - b|| / max(||a||, ||b||)``."""
    num = np.linalg.norm(a - b, axis=1)
    den = np.maximum(np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1))
    return np.where(den > _TINY, num / np.maximum(den, _TINY), 0.0)


def draw_instances(s: Schedule, n: int, seed: int, dim: int = DIM):
    """Random ``(x0, eps, t, x_t, x0_hat)`` with one time per row."""
    rng = make_rng(seed, 7)
    lo, hi = s.t_clip
    t = rng.uniform(lo, hi, n)
    x0 = rng.standard_normal((n, dim))
    eps = rng.standard_normal((n, dim))
    xt = noise(x0, t, eps, s)
    x0_hat = x0 + rng.standard_normal((n, dim)) * rng.uniform(0.01, 1.0, (n, 1))
    return x0, eps, t, xt, x0_hat


def _sq(a: np.ndarray) -> np.ndarray:
    return np.sum(a * a, axis=1)


def algebra_identities(s: Schedule, n: int, seed: int = 0) -> list[IdentityResult]:
    """Round-trips plus loss-weighting identities on ``n`` random instances."""
    if n <= 0:
        return []
    x0, eps, t, xt, x0_hat = draw_instances(s, n, seed)
    kinds = [k for k in KINDS if s.vp or k != "v"]
    out = []
    base = Prediction("x0", x0_hat, t, xt)
    native = {k: convert(base, k, s) for k in kinds}
    for a in kinds:
        for b in kinds:
            if a == b:
                continue
            back = convert(convert(native[a], b, s), a, s)
            out.append(IdentityResult(f"round_trip {a}->{b}->{a}", float(_row_rel_err(back.value, native[a].value).max()), n))

    l_x0 = _sq(x0 - x0_hat)
    l_eps = _sq(eps - native["eps"].value)
    out.append(IdentityResult("eps loss = SNR * x0 loss", float(rel_err(l_eps, snr(s, t) * l_x0).max()), n))
    out.append(IdentityResult("eps loss = w_eps * x0 loss", float(rel_err(l_eps, weight("w_eps", s, t) * l_x0).max()), n))
    out.append(IdentityResult("inv-SNR eps loss = x0 loss", float(rel_err(l_eps / snr(s, t), l_x0).max()), n))
    l_u = _sq(target_value("u", x0, eps, s, t) - native["u"].value)
    out.append(IdentityResult("u loss = w_u * x0 loss", float(rel_err(l_u, weight("w_u", s, t) * l_x0).max()), n))
    out.append(
        IdentityResult(
            "w_u direct = w_u via dlogSNR/dt",
            float(rel_err(weight("w_u", s, t), weight("w_u", s, t, form="log_snr")).max()),
            n,
        )
    )
    # a u-network supervised with the eps loss
    eps_from_u = convert(native["u"], "eps", s).value
    l_u_eps = _sq(eps - eps_from_u)
    out.append(IdentityResult("u->eps loss = w_u_to_eps * x0 loss", float(rel_err(l_u_eps, weight("w_u_to_eps", s, t) * l_x0).max()), n))
    if s.vp:
        l_v = _sq(target_value("v", x0, eps, s, t) - native["v"].value)
        out.append(IdentityResult("v loss = (SNR + 1) * x0 loss", float(rel_err(l_v, (snr(s, t) + 1.0) * l_x0).max()), n))
        w_ev = weight("w_eps_to_v", s, t) * l_x0
        l_ev = _sq(v_teacher_residual(native["eps"].value, eps, s, t))
        out.append(IdentityResult("eps->v loss = w_eps_to_v * x0 loss", float(rel_err(l_ev, w_ev).max()), n))
        # same loss with both v's formed explicitly: v - v_teacher is a difference of two
        # O(1) vectors, so near alpha = 0 it loses about log10(1 / alpha^2) digits
        v_teacher = v_from_eps_teacher(native["eps"].value, x0, s, t)
        l_ev_raw = _sq(target_value("v", x0, eps, s, t) - v_teacher)
        out.append(
            IdentityResult("eps->v loss, explicit v (cancellation)", float(rel_err(l_ev_raw, w_ev).max()), n, TEACHER_TOL_SCALE)
        )
    return out


def gradient_identity(s: Schedule, n: int, seed: int = 0, batch: int = 8, side: int = 4, hidden: int = 16) -> IdentityResult:
    """Worst relative gradient gap between x0 supervision and inverse-SNR eps supervision.

    Uses a small random network on random batches; the native kind is eps, so a
    VP schedule is required.
    """
    if n <= 0:
        return IdentityResult("grad x0 loss = grad inv-SNR eps loss", 0.0, 0)
    d = side * side
    cfg_x0 = TrainConfig(supervision="x0_from_native", native_kind="eps", schedule=s.name, hidden=hidden, frozen_base=False)
    cfg_inv = TrainConfig(supervision="inv_snr_eps", native_kind="eps", schedule=s.name, hidden=hidden, frozen_base=False)
    rng = make_rng(seed, 8)
    worst = 0.0
    for _ in range(n):
        params = init_params(rng, 2 * d + cfg_x0.time_features, hidden, d, zero_output=False)
        x0 = rng.uniform(-1, 1, (batch, d))
        eps = rng.standard_normal((batch, d))
        t = rng.uniform(*s.t_clip, batch)
        c = (rng.uniform(size=(batch, d)) > 0.5).astype(float)
        pair = TrainingPair(x0, eps, t, noise(x0, t, eps, s), c)
        la, ga = grad(params, pair, cfg_x0, s)
        lb, gb = grad(params, pair, cfg_inv, s)
        worst = max(worst, float(rel_err(la, lb)))
        for k in ga:
            scale = max(np.abs(ga[k]).max(), np.abs(gb[k]).max())
            if scale > 0:
                worst = max(worst, float(np.abs(ga[k] - gb[k]).max() / scale))
    return IdentityResult("grad x0 loss = grad inv-SNR eps loss", worst, n)
