"""Convergence-curve metrics: EMA smoothing, AUCC at a horizon, and mAUCC.

Pipeline order for :func:`maucc` is fixed: smooth, then normalize by the
curve's ``max_value``, then integrate. Both smoothing and normalization are
linear, so swapping the first two steps gives the same number.

Lower-is-better metrics (errors, distances) are integrated as-is; their mAUCC is
then also lower-is-better. Nothing is inverted.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DIRECTIONS = ("higher_better", "lower_better")
DEFAULT_HORIZONS = tuple(round(0.25 + 0.05 * i, 2) for i in range(16))
# absorbs float noise in h * T_max before the ceiling (0.55 * 100 = 55.000000000000007)
_CEIL_SLACK = 1e-9


@dataclass(frozen=True)
class ConvergenceCurve:
    points: tuple[tuple[int, float], ...]
    metric_name: str = "metric"
    max_value: float = 100.0
    direction: str = "higher_better"

    def __post_init__(self):
        pts = tuple((int(s), float(v)) for s, v in self.points)
        steps = [s for s, _ in pts]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("curve steps must be strictly increasing")
        if any(not math.isfinite(v) for _, v in pts):
            raise ValueError("curve values must be finite")
        if not self.max_value > 0:
            raise ValueError("max_value must be positive")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        object.__setattr__(self, "points", pts)

    @property
    def steps(self) -> np.ndarray:
        return np.array([s for s, _ in self.points], dtype=np.float64)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.points], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class MauccConfig:
    horizons: tuple[float, ...] = field(default=DEFAULT_HORIZONS)
    ema_weight: float = 0.9
    report_scale: float = 100.0

    def __post_init__(self):
        hs = tuple(float(h) for h in self.horizons)
        if not hs or any(not (0.0 < h <= 1.0) for h in hs) or list(hs) != sorted(hs):
            raise ValueError("horizons must be sorted fractions in (0, 1]")
        if not (0.0 <= self.ema_weight < 1.0):
            raise ValueError("ema_weight must lie in [0, 1)")
        object.__setattr__(self, "horizons", hs)


def ema_smooth(c: ConvergenceCurve, w: float) -> ConvergenceCurve:
    """``s_0 = v_0``, ``s_k = w * s_{k-1} + (1 - w) * v_k``."""
    if not (0.0 <= w < 1.0):
        raise ValueError("EMA weight must lie in [0, 1)")
    out = []
    acc = None
    for step, v in c.points:
        acc = v if acc is None else w * acc + (1.0 - w) * v
        out.append((step, acc))
    return replace(c, points=tuple(out))


def normalize(c: ConvergenceCurve) -> ConvergenceCurve:
    """Divide by ``max_value``; the result must lie in [0, 1]."""
    vals = c.values / c.max_value
    if vals.size and (vals.min() < -1e-12 or vals.max() > 1.0 + 1e-12):
        raise ValueError(
            f"normalized values leave [0, 1] (range {vals.min():.6g}..{vals.max():.6g}); check max_value"
        )
    return replace(c, points=tuple(zip((s for s, _ in c.points), vals.tolist())), max_value=1.0)


def horizon_step(horizon: float, t_max: float) -> int:
    return max(int(math.ceil(horizon * t_max - _CEIL_SLACK)), 0)


def aucc_at(c: ConvergenceCurve, horizon: float, t_max: float | None = None) -> float:
    """Mean of the (already normalized) curve over steps ``[0, ceil(horizon * t_max)]``.

    Trapezoid rule on the recorded steps. Before the first record the curve is
    held at its first value, after the last record at its last value, and the
    cutoff is linearly interpolated when it falls between records. ``t_max``
    defaults to the last recorded step.
    """
    if len(c) == 0:
        raise ValueError("cannot integrate an empty curve")
    if not (0.0 < horizon <= 1.0):
        raise ValueError("horizon must lie in (0, 1]")
    steps, vals = c.steps, c.values
    if t_max is None:
        t_max = steps[-1]
    end = horizon_step(horizon, t_max)
    if end <= 0:
        return float(vals[0])
    xs = np.concatenate([[0.0], steps, [max(end, steps[-1])]])
    ys = np.concatenate([[vals[0]], vals, [vals[-1]]])
    keep = xs < end
    x_cut = np.append(xs[keep], end)
    y_cut = np.append(ys[keep], np.interp(end, xs, ys))
    area = float(np.sum(0.5 * np.diff(x_cut) * (y_cut[1:] + y_cut[:-1])))
    return area / end


def aucc_table(c: ConvergenceCurve, cfg: MauccConfig = MauccConfig(), t_max: float | None = None):
    """``[(horizon, AUCC@horizon), ...]`` after smoothing and normalizing ``c``."""
    prepared = normalize(ema_smooth(c, cfg.ema_weight))
    return [(h, aucc_at(prepared, h, t_max)) for h in cfg.horizons]


def maucc(c: ConvergenceCurve, cfg: MauccConfig = MauccConfig(), t_max: float | None = None) -> float:
    """Mean AUCC over ``cfg.horizons``, scaled by ``cfg.report_scale``."""
    table = aucc_table(c, cfg, t_max)
    return cfg.report_scale * float(np.mean([a for _, a in table]))


def mask_iou(samples: np.ndarray, controls: np.ndarray) -> float:
    """Mean IoU (0-100) between ``samples > 0`` and binary ``controls``.

    Two empty masks count as a perfect match.
    """
    samples = np.asarray(samples)
    controls = np.asarray(controls)
    if samples.shape != controls.shape:
        raise ValueError(f"shape mismatch: samples {samples.shape} vs controls {controls.shape}")
    n = samples.shape[0] if samples.ndim > 1 else 1
    pred = (samples > 0.0).reshape(n, -1)
    true = (controls > 0.5).reshape(n, -1)
    inter = np.sum(pred & true, axis=1)
    union = np.sum(pred | true, axis=1)
    iou = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
    return float(100.0 * np.mean(iou))


def format_value(v: float) -> str:
    return f"{v:.17g}"


def curve_to_csv(c: ConvergenceCurve, with_name: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "value", "metric_name"] if with_name else ["step", "value"])
    for step, v in c.points:
        w.writerow([step, format_value(v), c.metric_name] if with_name else [step, format_value(v)])
    return buf.getvalue()


def write_curve_csv(c: ConvergenceCurve, path: str | Path, with_name: bool = True) -> None:
    Path(path).write_bytes(curve_to_csv(c, with_name).encode("ascii"))


def read_curve_csv(
    path: str | Path, max_value: float = 100.0, direction: str = "higher_better", metric_name: str | None = None
) -> ConvergenceCurve:
    """Read a ``step,value[,...]`` CSV with a header row.

    ``raw_metric`` is accepted as an alias of ``value``.
    """
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        rows = list(reader)
    col = "value" if "value" in fields else "raw_metric"
    if "step" not in fields or col not in fields:
        raise ValueError(f"{path}: header must contain 'step' and 'value'")
    name = metric_name or (rows[0].get("metric_name") if rows else None) or "metric"
    pts = [(int(r["step"]), float(r[col])) for r in rows]
    return ConvergenceCurve(tuple(pts), name, max_value, direction)


def curves_equal(a: Iterable[float], b: Iterable[float], rel: float) -> bool:
    a, b = np.asarray(list(a), dtype=float), np.asarray(list(b), dtype=float)
    if a.shape != b.shape:
        return False
    return bool(np.all(np.abs(a - b) <= rel * np.maximum(np.abs(a), np.abs(b))))


def summarize(values: Sequence[float]) -> tuple[float, float, float]:
    """``(mean, min, max)``."""
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.min()), float(v.max())
