"""Interpolation schedules ``x_t = alpha(t) * x0 + sigma(t) * eps`` on t in [0, 1].

Time runs from clean data at ``t = 0`` to pure noise at ``t = 1``. Flow-matching
code often uses the reverse convention; everything here uses this one.

Three built-in schedules are provided:

- ``vp_cosine``: ``alpha = cos(pi t / 2)``, ``sigma = sin(pi t / 2)``.
- ``vp_linear``: the discrete Stable-Diffusion style beta schedule (betas
  linearly spaced in [0.00085, 0.012] over 1000 steps) tabulated as
  ``alpha_k = sqrt(prod_{j<=k}(1 - beta_j))`` and linearly interpolated in t.
  The beta range is a conventional stand-in, not a measured property of any
  particular checkpoint. Its terminal alpha is about 0.04, not 0.
- ``ot_flow``: the optimal-transport path ``alpha = 1 - t``, ``sigma = t``.

``custom_tabulated`` schedules are read from a two-column text table, see
:func:`load_tabulated`.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError

KINDS = ("vp_linear", "vp_cosine", "ot_flow", "custom_tabulated")
BUILTIN = ("vp_linear", "vp_cosine", "ot_flow")

DEFAULT_CLIP = (1e-4, 1.0 - 1e-4)
FD_STEP = 1e-6
# slack on the clip-range test so grid endpoints computed in floating point pass
_CLIP_SLACK = 1e-12

SD_BETA_START = 0.00085
SD_BETA_END = 0.012
SD_NUM_STEPS = 1000


class Schedule:
    """Base class. Subclasses provide ``alpha``/``sigma`` and optionally derivatives.

    Instances are immutable after construction. All methods accept a float or a
    numpy array of times and return a float64 array of the same shape.
    """

    kind: str = ""
    vp: bool = False

    def __init__(self, t_clip: tuple[float, float] = DEFAULT_CLIP, name: str | None = None):
        t_min, t_max = float(t_clip[0]), float(t_clip[1])
        if not (0.0 <= t_min < t_max <= 1.0):
            raise ValueError(f"invalid t_clip {t_clip!r}")
        self._t_clip = (t_min, t_max)
        self._name = name or self.kind

    @property
    def t_clip(self) -> tuple[float, float]:
        return self._t_clip

    @property
    def t_min(self) -> float:
        return self._t_clip[0]

    @property
    def t_max(self) -> float:
        return self._t_clip[1]

    @property
    def name(self) -> str:
        return self._name

    def __setattr__(self, key, value):
        if key in self.__dict__:
            raise AttributeError(f"{type(self).__name__} is immutable")
        super().__setattr__(key, value)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, t_clip={self.t_clip})"

    def alpha(self, t):
        raise NotImplementedError

    def sigma(self, t):
        raise NotImplementedError

    def alpha_dot(self, t):
        return _central_difference(self.alpha, t)

    def sigma_dot(self, t):
        return _central_difference(self.sigma, t)

    def with_clip(self, t_clip: tuple[float, float]) -> "Schedule":
        """Return a copy of this schedule with a different sampling clamp."""
        raise NotImplementedError

    def check_time(self, t) -> np.ndarray:
        """Return ``t`` as an array, raising :class:`DomainError` outside the clip range."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(~np.isfinite(t)) or np.any(t < self.t_min - _CLIP_SLACK) or np.any(
            t > self.t_max + _CLIP_SLACK
        ):
            raise DomainError(
                f"time outside clip range [{self.t_min}, {self.t_max}]: "
                f"min={np.min(t)!r}, max={np.max(t)!r}"
            )
        return t


def _central_difference(f, t, h: float = FD_STEP) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    lo = np.clip(t - h, 0.0, 1.0)
    hi = np.clip(t + h, 0.0, 1.0)
    return (f(hi) - f(lo)) / (hi - lo)


class VPCosine(Schedule):
    kind = "vp_cosine"
    vp = True

    def alpha(self, t):
        return np.cos(0.5 * math.pi * np.asarray(t, dtype=np.float64))

    def sigma(self, t):
        return np.sin(0.5 * math.pi * np.asarray(t, dtype=np.float64))

    def alpha_dot(self, t):
        return -0.5 * math.pi * np.sin(0.5 * math.pi * np.asarray(t, dtype=np.float64))

    def sigma_dot(self, t):
        return 0.5 * math.pi * np.cos(0.5 * math.pi * np.asarray(t, dtype=np.float64))

    def with_clip(self, t_clip):
        return VPCosine(t_clip, self.name)


class OTFlow(Schedule):
    kind = "ot_flow"
    vp = False

    def alpha(self, t):
        return 1.0 - np.asarray(t, dtype=np.float64)

    def sigma(self, t):
        return np.array(t, dtype=np.float64)

    def alpha_dot(self, t):
        return np.full(np.shape(t), -1.0)

    def sigma_dot(self, t):
        return np.full(np.shape(t), 1.0)

    def with_clip(self, t_clip):
        return OTFlow(t_clip, self.name)


class Tabulated(Schedule):
    """Piecewise-linear alpha(t) from a table; sigma derived from alpha.

    With ``vp=True`` sigma is ``sqrt(1 - alpha**2)``, otherwise ``1 - alpha``.
    Derivatives use central differences with step 1e-6.
    """

    kind = "custom_tabulated"

    def __init__(
        self,
        times: Sequence[float],
        alphas: Sequence[float],
        vp: bool,
        t_clip: tuple[float, float] = DEFAULT_CLIP,
        name: str | None = None,
        kind: str | None = None,
    ):
        if kind is not None:
            self.kind = kind
        super().__init__(t_clip, name)
        times = np.asarray(times, dtype=np.float64)
        alphas = np.asarray(alphas, dtype=np.float64)
        if times.ndim != 1 or times.shape != alphas.shape or len(times) < 2:
            raise ValueError("table needs matching 1-D columns with at least two rows")
        if np.any(np.diff(times) <= 0):
            raise ValueError("table times must be strictly increasing")
        if times[0] != 0.0 or times[-1] != 1.0:
            raise ValueError("table must span t = 0 to t = 1")
        if np.any(np.diff(alphas) > 0):
            raise ValueError("alpha must be non-increasing")
        if np.any(alphas < 0) or np.any(alphas > 1):
            raise ValueError("alpha must lie in [0, 1]")
        times.setflags(write=False)
        alphas.setflags(write=False)
        self._times = times
        self._alphas = alphas
        self.vp = bool(vp)

    @property
    def table(self) -> tuple[np.ndarray, np.ndarray]:
        return self._times, self._alphas

    def alpha(self, t):
        return np.interp(np.asarray(t, dtype=np.float64), self._times, self._alphas)

    def sigma(self, t):
        a = self.alpha(t)
        if self.vp:
            return np.sqrt(np.maximum(1.0 - a * a, 0.0))
        return 1.0 - a

    def with_clip(self, t_clip):
        return Tabulated(self._times, self._alphas, self.vp, t_clip, self.name, self.kind)


def vp_linear(t_clip: tuple[float, float] = DEFAULT_CLIP) -> Tabulated:
    betas = np.linspace(SD_BETA_START, SD_BETA_END, SD_NUM_STEPS, dtype=np.float64)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    times = np.linspace(0.0, 1.0, SD_NUM_STEPS + 1)
    return Tabulated(times, np.sqrt(alpha_bar), vp=True, t_clip=t_clip, name="vp_linear", kind="vp_linear")


def load_tabulated(path: str | Path, t_clip: tuple[float, float] = DEFAULT_CLIP) -> Tabulated:
    """Read a ``custom_tabulated`` schedule.

    The file starts with a header line ``# schedule: vp`` or ``# schedule: generic``
    followed by whitespace- or comma-separated ``t alpha`` rows. Further ``#`` lines
    are comments.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing '# schedule: vp|generic' header")
    header = lines[0].lstrip("#").strip().lower()
    key, _, value = header.partition(":")
    if key.strip() != "schedule" or value.strip() not in ("vp", "generic"):
        raise ValueError(f"{path}: bad header {lines[0]!r}")
    rows = []
    for line in lines[1:]:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"{path}: expected two columns, got {line!r}")
        rows.append((float(parts[0]), float(parts[1])))
    arr = np.array(rows, dtype=np.float64).reshape(-1, 2)
    return Tabulated(arr[:, 0], arr[:, 1], vp=value.strip() == "vp", t_clip=t_clip, name=path.stem)


def get_schedule(name: str, t_clip: tuple[float, float] = DEFAULT_CLIP) -> Schedule:
    """Look up a schedule by name; anything else is treated as a table path."""
    if name == "vp_cosine":
        return VPCosine(t_clip)
    if name == "ot_flow":
        return OTFlow(t_clip)
    if name == "vp_linear":
        return vp_linear(t_clip)
    if Path(name).is_file():
        return load_tabulated(name, t_clip)
    raise ValueError(f"unknown schedule {name!r}; expected one of {BUILTIN} or a table file")


def snr(s: Schedule, t) -> np.ndarray:
    """Signal-to-noise ratio ``alpha**2 / sigma**2``."""
    t = s.check_time(t)
    a, sg = s.alpha(t), s.sigma(t)
    if np.any(sg == 0):
        raise DomainError("sigma(t) = 0; SNR is infinite")
    return (a * a) / (sg * sg)


def dlog_snr_dt(s: Schedule, t) -> np.ndarray:
    """Time derivative of log SNR, ``2 * (alpha_dot / alpha - sigma_dot / sigma)``."""
    t = s.check_time(t)
    a, sg = s.alpha(t), s.sigma(t)
    if np.any(a == 0) or np.any(sg == 0):
        raise DomainError("log SNR is undefined where alpha or sigma vanishes")
    return 2.0 * (s.alpha_dot(t) / a - s.sigma_dot(t) / sg)


def discrete_grid(s: Schedule, n_steps: int) -> np.ndarray:
    """``n_steps + 1`` uniformly spaced times from ``t_max`` down to ``t_min``."""
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError(f"n_steps must be a positive integer, got {n_steps!r}")
    return np.linspace(s.t_max, s.t_min, int(n_steps) + 1)


def check_invariants(s: Schedule, n_grid: int = 1024) -> dict[str, float]:
    """Measure the schedule invariants on a uniform grid.

    Returns the worst violation of each property (0.0 means satisfied).
    """
    grid = np.linspace(0.0, 1.0, n_grid)
    a, sg = s.alpha(grid), s.sigma(grid)
    out = {
        "alpha_increase": float(max(np.max(np.diff(a)), 0.0)),
        "sigma_decrease": float(max(-np.min(np.diff(sg)), 0.0)),
        "boundary_t0": float(max(abs(a[0] - 1.0), abs(sg[0]))),
        "boundary_t1": float(max(abs(a[-1]), abs(sg[-1] - 1.0))),
    }
    if s.vp:
        out["vp_identity"] = float(np.max(np.abs(a * a + sg * sg - 1.0)))
    return out
