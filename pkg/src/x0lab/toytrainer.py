"""Desk-scale controllable-generation experiment.

A small MLP predicts a native parameterization (eps or u) from the noisy image,
a binary layout mask and Fourier time features. It can be supervised with its
own loss, with another parameterization's loss, with the x0 loss after
converting its output to an x0 estimate, or with the inverse-SNR weighted eps
loss. Every ``eval_every`` steps the model samples 32 images for held-out masks
with DDIM (20 steps, fixed noise) and the mask IoU of the result is recorded.

Gradients are computed by hand (reverse mode through the three-layer MLP) in
float64; :func:`numerical_grad` gives the finite-difference reference.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import IncompatibleModeError, TrainingDivergence
from .forward import TrainingPair, draw_pair, make_rng
from .metrics import ConvergenceCurve, mask_iou
from .param import Prediction, conversion_gain, convert, expand, target_value
from .sampler import SamplerConfig, sample
from .schedule import Schedule, get_schedule

log = logging.getLogger(__name__)

SUPERVISIONS = ("eps", "v", "u", "x0_from_native", "inv_snr_eps")
NATIVE_KINDS = ("eps", "u")
DIVERGENCE_LOSS = 1e6

# stream ids for make_rng(seed, 0, stream)
_INIT_STREAM = 1
_DATA_STREAM = 2
_HELDOUT_STREAM = 3
_PRIOR_STREAM = 4
PRIOR_SAMPLES = 4096
PRIOR_FLOOR = 1e-6

_MODE_TARGET = {"eps": "eps", "v": "v", "u": "u", "x0_from_native": "x0"}


@dataclass(frozen=True)
class ToyTask:
    """Random blob masks and the images they lay out.

    ``x0 = clip(2 * blur(mask) - 1 + texture_amp * texture, -1, 1)`` where the
    texture is unit-variance low-pass noise.
    """

    image_side: int = 16
    mask_blobs: tuple[int, int] = (1, 3)
    texture_amp: float = 0.25
    seed: int = 0
    mask_blur: float = 1.0
    texture_blur: float = 1.5

    @property
    def dim(self) -> int:
        return self.image_side * self.image_side

    def masks(self, rng: np.random.Generator, n: int) -> np.ndarray:
        side = self.image_side
        yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
        out = np.zeros((n, side, side))
        lo, hi = self.mask_blobs
        counts = rng.integers(lo, hi + 1, size=n)
        for i in range(n):
            for _ in range(counts[i]):
                cy, cx = rng.uniform(2.0, side - 2.0, size=2)
                ry, rx = rng.uniform(side / 8, side / 3, size=2)
                out[i][((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0] = 1.0
        return out

    def images(self, rng: np.random.Generator, masks: np.ndarray) -> np.ndarray:
        smooth = gaussian_filter(masks, sigma=(0, self.mask_blur, self.mask_blur), mode="nearest")
        tex = gaussian_filter(rng.standard_normal(masks.shape), sigma=(0, self.texture_blur, self.texture_blur), mode="wrap")
        tex /= tex.reshape(len(tex), -1).std(axis=1).reshape(-1, 1, 1)
        return np.clip(2.0 * smooth - 1.0 + self.texture_amp * tex, -1.0, 1.0)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """``(x0, control)``, each flattened to shape ``(n, image_side**2)``."""
        m = self.masks(rng, n)
        x0 = self.images(rng, m)
        return x0.reshape(n, -1), m.reshape(n, -1)

    def heldout_controls(self, n: int = 32) -> np.ndarray:
        return self.masks(make_rng(self.seed, 0, _HELDOUT_STREAM), n).reshape(n, -1)

    def image_prior(self) -> "ImagePrior":
        """Full-covariance Gaussian fit of the unconditional image distribution."""
        x0, _ = self.sample(make_rng(self.seed, 0, _PRIOR_STREAM), PRIOR_SAMPLES)
        lam, vecs = np.linalg.eigh(np.cov(x0, rowvar=False))
        return ImagePrior(x0.mean(axis=0), np.maximum(lam, PRIOR_FLOOR), vecs)


@dataclass(frozen=True)
class ImagePrior:
    """Gaussian ``N(mean, V diag(lam) V^T)`` stored in its eigenbasis.

    Its posterior mean is a Wiener filter that accepts one time per row, which
    the dense oracle path does not.
    """

    mean: np.ndarray
    lam: np.ndarray
    vecs: np.ndarray

    def posterior_x0(self, x_t: np.ndarray, t, s: Schedule) -> np.ndarray:
        t = s.check_time(t)
        a, sg = expand(s.alpha(t), x_t.ndim), expand(s.sigma(t), x_t.ndim)
        r = (x_t - a * self.mean) @ self.vecs
        return self.mean + (r * (a * self.lam / (a * a * self.lam + sg * sg))) @ self.vecs.T


@dataclass(frozen=True)
class TrainConfig:
    supervision: str = "x0_from_native"
    native_kind: str | None = None
    schedule: str = "vp_linear"
    lr: float = 1e-3
    batch: int = 64
    steps: int = 5000
    eval_every: int = 100
    seed: int = 1
    hidden: int = 256
    time_features: int = 16
    eval_chains: int = 32
    eval_sampler_steps: int = 20
    frozen_base: bool = True

    def __post_init__(self):
        if self.supervision not in SUPERVISIONS:
            raise IncompatibleModeError(f"unknown supervision {self.supervision!r}")
        if self.native_kind is not None and self.native_kind not in NATIVE_KINDS:
            raise IncompatibleModeError(f"native_kind must be one of {NATIVE_KINDS}")
        if self.time_features % 2:
            raise ValueError("time_features must be even")
        if self.steps < 0 or self.batch < 1 or self.eval_every < 1:
            raise ValueError("steps >= 0, batch >= 1 and eval_every >= 1 are required")

    def resolved(self, s: Schedule) -> "TrainConfig":
        """Fill the default native kind (eps on VP schedules, u otherwise) and validate."""
        native = self.native_kind or ("eps" if s.vp else "u")
        check_mode(self.supervision, native, s)
        return TrainConfig(**{**asdict(self), "native_kind": native})


def check_mode(mode: str, native_kind: str, s: Schedule) -> None:
    if mode not in SUPERVISIONS:
        raise IncompatibleModeError(f"unknown supervision {mode!r}")
    if mode == "v" and not s.vp:
        raise IncompatibleModeError("v supervision needs a variance-preserving schedule")
    if mode == "inv_snr_eps" and native_kind != "eps":
        raise IncompatibleModeError("inv_snr_eps supervision needs an eps-native predictor")


# -- network ---------------------------------------------------------------

def time_embedding(t, width: int) -> np.ndarray:
    """``[sin(2^k pi t), cos(2^k pi t)]`` for ``k = 0 .. width/2 - 1``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = math.pi * 2.0 ** np.arange(width // 2)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def features(x_t: np.ndarray, control: np.ndarray, t, width: int) -> np.ndarray:
    emb = time_embedding(np.broadcast_to(np.asarray(t, dtype=np.float64), (x_t.shape[0],)), width)
    return np.concatenate([x_t, control, emb], axis=1)


def init_params(
    rng: np.random.Generator, d_in: int, hidden: int, d_out: int, zero_output: bool = True
) -> dict[str, np.ndarray]:
    """LeCun-normal hidden layers; the output layer starts at zero when ``zero_output``.

    A zero output layer makes the untrained model equal to the frozen base, the
    same trick as a zero-initialised adapter.
    """
    sizes = [(d_in, hidden), (hidden, hidden), (hidden, d_out)]
    params = {}
    for i, (a, b) in enumerate(sizes, start=1):
        params[f"W{i}"] = rng.standard_normal((a, b)) / math.sqrt(a)
        params[f"b{i}"] = np.zeros(b)
    if zero_output:
        params["W3"] = np.zeros_like(params["W3"])
    return params


def _silu(h):
    s = 1.0 / (1.0 + np.exp(-h))
    return h * s, s


def mlp_forward(params, inp):
    h1 = inp @ params["W1"] + params["b1"]
    a1, s1 = _silu(h1)
    h2 = a1 @ params["W2"] + params["b2"]
    a2, s2 = _silu(h2)
    out = a2 @ params["W3"] + params["b3"]
    return out, (inp, h1, a1, s1, h2, a2, s2)


def mlp_backward(params, cache, g_out) -> dict[str, np.ndarray]:
    inp, h1, a1, s1, h2, a2, s2 = cache
    g = {"W3": a2.T @ g_out, "b3": g_out.sum(axis=0)}
    gh2 = (g_out @ params["W3"].T) * (s2 * (1.0 + h2 * (1.0 - s2)))
    g["W2"] = a1.T @ gh2
    g["b2"] = gh2.sum(axis=0)
    gh1 = (gh2 @ params["W2"].T) * (s1 * (1.0 + h1 * (1.0 - s1)))
    g["W1"] = inp.T @ gh1
    g["b1"] = gh1.sum(axis=0)
    return g


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step += 1
        bc1 = 1.0 - self.beta1**self.step
        bc2 = 1.0 - self.beta2**self.step
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            params[k] = params[k] - self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def base_output(base: ImagePrior | None, native_kind: str, x_t: np.ndarray, t, s: Schedule):
    """Frozen backbone prediction: the image-prior posterior mean, in the native kind."""
    if base is None:
        return 0.0
    return convert(Prediction("x0", base.posterior_x0(x_t, t, s), t, x_t), native_kind, s).value


def native_forward(weights, base, x_t, control, t, cfg: TrainConfig, s: Schedule):
    """Native prediction ``base(x_t, t) + MLP(x_t, control, t)`` and the MLP cache."""
    out, cache = mlp_forward(weights, features(x_t, control, t, cfg.time_features))
    return out + base_output(base, cfg.native_kind, x_t, t, s), cache


@dataclass
class ModelParams:
    weights: dict[str, np.ndarray]
    optimizer: Adam
    config: TrainConfig
    base: ImagePrior | None = None

    @property
    def step(self) -> int:
        return self.optimizer.step

    def predictor(self, s: Schedule):
        """``f(x, t, control) -> Prediction`` of the native kind, for the samplers."""
        native = self.config.native_kind

        def f(x, t, control):
            out, _ = native_forward(self.weights, self.base, x, control, t, self.config, s)
            return Prediction(native, out, t, x)

        return f


# -- losses ----------------------------------------------------------------

def loss_and_grad_output(value: np.ndarray, pair: TrainingPair, mode: str, native_kind: str, s: Schedule):
    """Mean loss over batch and pixels, and its gradient w.r.t. the native output."""
    check_mode(mode, native_kind, s)
    n = value.size
    if mode == "inv_snr_eps":
        w = expand(s.sigma(pair.t) ** 2 / s.alpha(pair.t) ** 2, value.ndim)
        r = value - pair.eps
        return float(np.sum(w * r * r) / n), 2.0 * w * r / n
    kind = _MODE_TARGET[mode]
    pred = Prediction(native_kind, value, pair.t, pair.xt)
    r = convert(pred, kind, s).value - target_value(kind, pair.x0, pair.eps, s, pair.t)
    gain = expand(conversion_gain(native_kind, kind, s, pair.t), value.ndim)
    return float(np.sum(r * r) / n), 2.0 * gain * r / n


def loss(pred: Prediction, pair: TrainingPair, mode: str, s: Schedule) -> float:
    """Mean squared supervision loss of ``pred`` (its kind is the native kind)."""
    return loss_and_grad_output(pred.value, pair, mode, pred.kind, s)[0]


def batch_loss(params, pair: TrainingPair, cfg: TrainConfig, s: Schedule, base=None) -> float:
    out, _ = native_forward(params, base, pair.xt, pair.control, pair.t, cfg, s)
    return loss_and_grad_output(out, pair, cfg.supervision, cfg.native_kind, s)[0]


def grad(params, pair: TrainingPair, cfg: TrainConfig, s: Schedule, base=None):
    """``(loss, gradients)`` of the mean batch loss w.r.t. every MLP parameter."""
    out, cache = native_forward(params, base, pair.xt, pair.control, pair.t, cfg, s)
    value, g_out = loss_and_grad_output(out, pair, cfg.supervision, cfg.native_kind, s)
    grads = mlp_backward(params, cache, g_out)
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient in {k}")
    return value, grads


def numerical_grad(params, pair, cfg, s, key: str, index: tuple, h: float = 1e-6, base=None) -> float:
    """Central finite difference of the batch loss w.r.t. one parameter entry."""
    p = {k: v.copy() for k, v in params.items()}
    p[key][index] += h
    up = batch_loss(p, pair, cfg, s, base)
    p[key][index] -= 2 * h
    down = batch_loss(p, pair, cfg, s, base)
    return (up - down) / (2 * h)


# -- training --------------------------------------------------------------

def init_model(cfg: TrainConfig, task: ToyTask, s: Schedule) -> ModelParams:
    cfg = cfg.resolved(s)
    rng = make_rng(cfg.seed, 0, _INIT_STREAM)
    d = task.dim
    weights = init_params(rng, 2 * d + cfg.time_features, cfg.hidden, d, zero_output=cfg.frozen_base)
    base = task.image_prior() if cfg.frozen_base else None
    return ModelParams(weights, Adam(lr=cfg.lr), cfg, base)


def evaluate(model: ModelParams, task: ToyTask, s: Schedule, controls: np.ndarray) -> float:
    cfg = model.config
    scfg = SamplerConfig("ddim", cfg.eval_sampler_steps, seed=cfg.seed)
    x = sample(model.predictor(s), scfg, s, controls.shape, control=controls)
    return mask_iou(x, controls)


def train(cfg: TrainConfig, task: ToyTask, schedule: Schedule | None = None, progress=None):
    """Train and return ``(ModelParams, ConvergenceCurve)`` of held-out mask IoU.

    ``progress``, when given, is called as ``progress(step, loss, iou_or_None)``.
    Raises :class:`TrainingDivergence` on non-finite values or a loss above 1e6.
    """
    s = schedule or get_schedule(cfg.schedule)
    model = init_model(cfg, task, s)
    cfg = model.config
    data_rng = make_rng(cfg.seed, 0, _DATA_STREAM)
    controls = task.heldout_controls(cfg.eval_chains)
    points = []
    for step in range(1, cfg.steps + 1):
        x0, c = task.sample(data_rng, cfg.batch)
        pair = draw_pair(data_rng, x0, s, c)
        value, grads = grad(model.weights, pair, cfg, s, model.base)
        if not math.isfinite(value) or value > DIVERGENCE_LOSS:
            raise TrainingDivergence(f"loss {value!r} at step {step} ({cfg.supervision}, seed {cfg.seed})")
        model.optimizer.update(model.weights, grads)
        iou = None
        if step % cfg.eval_every == 0:
            iou = evaluate(model, task, s, controls)
            points.append((step, iou))
            log.debug("step %d loss %.6g iou %.3f", step, value, iou)
        if progress is not None:
            progress(step, value, iou)
    for k, w in model.weights.items():
        if not np.all(np.isfinite(w)):
            raise TrainingDivergence(f"non-finite weights in {k}")
    curve = ConvergenceCurve(tuple(points), "mask_iou", 100.0, "higher_better")
    return model, curve
