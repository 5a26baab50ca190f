"""Acceptance suite: one PASS/FAIL line per criterion, at its stated tolerance.

Run with ``pytest -v tests/test_acceptance.py``. Criterion 7 trains 12 toy models
(about 10 minutes on one CPU); its runs are shared with criterion 8.
"""

import math
import time

import numpy as np
import pytest

from x0lab import cli
from x0lab.identities import algebra_identities, gradient_identity
from x0lab.forward import draw_pair, make_rng
from x0lab.metrics import DEFAULT_HORIZONS, ConvergenceCurve, MauccConfig, ema_smooth, maucc
from x0lab.oracle import GaussianData, make_predictor
from x0lab.sampler import SamplerConfig, sample
from x0lab.schedule import get_schedule
from x0lab.toytrainer import ToyTask, TrainConfig, grad, init_model, numerical_grad, train

SEEDS = (1, 2, 3)


@pytest.fixture
def report(capsys):
    def _report(k, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {k}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok

    return _report


def test_1_identity_suite(report):
    t0 = time.perf_counter()
    worst, bad = 0.0, []
    for name in ("vp_cosine", "ot_flow"):
        for r in algebra_identities(get_schedule(name), 10_000, seed=1):
            tol = 1e-10 if r.name.startswith("eps loss") else 1e-9
            if not r.ok(tol):
                bad.append(f"{name}: {r.name} {r.worst:.2e}")
            if r.tol_scale == 1.0:
                worst = max(worst, r.worst)
    dt = time.perf_counter() - t0
    ok = not bad and dt < 10.0
    assert report(1, ok, f"worst rel err {worst:.2e}, {dt:.2f} s (< 10 s) {'; '.join(bad)}")


def test_2_gradient_equivalence(report):
    t0 = time.perf_counter()
    r = gradient_identity(get_schedule("vp_linear"), 100, seed=2)
    dt = time.perf_counter() - t0
    ok = r.worst < 1e-9 and dt < 30.0
    assert report(2, ok, f"100 batches, worst rel err {r.worst:.2e} (< 1e-9), {dt:.2f} s (< 30 s)")


def test_3_finite_differences(report):
    s = get_schedule("vp_linear")
    task = ToyTask()
    worst = 0.0
    for b in range(5):
        sup = ("eps", "x0_from_native", "inv_snr_eps", "v", "u")[b]
        cfg = TrainConfig(supervision=sup, seed=b, frozen_base=True).resolved(s)
        model = init_model(cfg, task, s)
        rng = make_rng(30, b)
        # perturb the zero output layer so every parameter receives gradient
        model.weights["W3"] = rng.standard_normal(model.weights["W3"].shape) * 0.05
        x0, c = task.sample(rng, 16)
        pair = draw_pair(rng, x0, s, c)
        _, g = grad(model.weights, pair, cfg, s, model.base)
        for _ in range(10):
            key = ("W1", "b1", "W2", "b2", "W3", "b3")[rng.integers(6)]
            idx = tuple(int(rng.integers(n)) for n in model.weights[key].shape)
            fd = numerical_grad(model.weights, pair, cfg, s, key, idx, base=model.base)
            err = abs(g[key][idx] - fd) / max(abs(fd), abs(g[key][idx]), 1e-8)
            worst = max(worst, err)
    assert report(3, worst < 1e-4, f"50 probes, worst rel err {worst:.2e} (< 1e-4)")


def test_4_sampler_statistics(report):
    mu = np.array([0.5, -1.0, 0.0, 2.0, 1.5, -0.3, 0.8, -2.0])
    var = np.linspace(0.25, 4.0, 8)
    data = GaussianData(mu, var)
    n = 10_000
    t0 = time.perf_counter()
    lines, ok = [], True
    for sched, kind, steps in (("vp_cosine", "ddim", 50), ("vp_cosine", "ddpm", 50), ("ot_flow", "euler_flow", 200)):
        s = get_schedule(sched)
        x = sample(make_predictor(data, s), SamplerConfig(kind, steps, seed=4), s, (n, 8))
        z = np.abs(x.mean(0) - mu) / np.sqrt(var / n)
        rel = np.abs(x.var(0, ddof=1) / var - 1)
        good = bool(z.max() < 3 and rel.max() < 0.05)
        ok &= good
        lines.append(f"{kind}-{steps} {sched}: max |z| {z.max():.2f}, max var rel err {rel.max():.3f} {'ok' if good else 'FAIL'}")
    dt = time.perf_counter() - t0
    ok &= dt < 120
    assert report(4, ok, "; ".join(lines) + f"; {dt:.1f} s")


def test_5_predictor_kind_invariance(report):
    data = GaussianData(np.array([0.3, -0.7, 1.1]), np.array([0.5, 1.0, 2.0]))
    worst = 0.0
    for sched, kinds in (("vp_cosine", ("eps", "v", "u")), ("ot_flow", ("eps", "u"))):
        s = get_schedule(sched)
        cfg = SamplerConfig("ddim", 50, seed=5)
        _, ref = sample(make_predictor(data, s, "x0"), cfg, s, (64, 3), return_trajectory=True)
        for k in kinds:
            _, tr = sample(make_predictor(data, s, k), cfg, s, (64, 3), return_trajectory=True)
            err = np.abs(tr - ref) / np.maximum(np.abs(ref), 1.0)
            worst = max(worst, float(err.max()))
    assert report(5, worst < 1e-9, f"worst trajectory rel err {worst:.2e} (< 1e-9)")


def test_6_maucc_units(report):
    no_ema = MauccConfig(ema_weight=0.0)
    const = maucc(ConvergenceCurve(tuple((i, 0.5) for i in range(100)), max_value=1.0), no_ema)
    ramp_c = ConvergenceCurve(tuple((i, i / 5000) for i in range(5001)), max_value=1.0)
    ramp = maucc(ramp_c, no_ema)
    closed = float(np.mean(DEFAULT_HORIZONS)) / 2 * 100
    ident = ema_smooth(ramp_c, 0.0).points == ramp_c.points
    ok = const == 50.0 and abs(ramp - 31.25) <= 1e-9 and abs(closed - 31.25) <= 1e-12 and ident
    assert report(6, ok, f"constant {const!r}, ramp {ramp:.12f} (closed form {closed}), EMA w=0 identity {ident}")


@pytest.fixture(scope="module")
def runs():
    out = {}
    task = ToyTask()
    arms = [("vp_linear", sup, seed) for seed in SEEDS for sup in ("eps", "x0_from_native")]
    arms += [("vp_linear", "inv_snr_eps", 1)]
    arms += [("ot_flow", sup, seed) for seed in SEEDS for sup in ("u", "x0_from_native")]
    for sched, sup, seed in arms:
        t0 = time.perf_counter()
        _, curve = train(TrainConfig(supervision=sup, schedule=sched, seed=seed), task)
        out[sched, sup, seed] = (curve, time.perf_counter() - t0)
    return out


def test_7_convergence_direction(report, runs):
    vp = {k: maucc(c) for k, (c, _) in runs.items() if k[0] == "vp_linear"}
    fin = {k: c.values[-1] for k, (c, _) in runs.items()}
    dt = sum(t for _, t in runs.values())
    per_seed = [vp["vp_linear", "x0_from_native", s] >= vp["vp_linear", "eps", s] for s in SEEDS]
    iou_x0 = np.mean([fin["vp_linear", "x0_from_native", s] for s in SEEDS])
    iou_eps = np.mean([fin["vp_linear", "eps", s] for s in SEEDS])
    ot = {k: maucc(c) for k, (c, _) in runs.items() if k[0] == "ot_flow"}
    ratios = [ot["ot_flow", "x0_from_native", s] / ot["ot_flow", "u", s] for s in SEEDS]
    vp_ok = all(per_seed) and iou_x0 >= iou_eps
    ot_ok = all(r >= 0.95 for r in ratios)
    detail = (
        "VP mAUCC x0/eps per seed "
        + ", ".join(f"{vp['vp_linear', 'x0_from_native', s]:.2f}/{vp['vp_linear', 'eps', s]:.2f}" for s in SEEDS)
        + f"; mean final IoU x0 {iou_x0:.2f} vs eps {iou_eps:.2f} ({'ok' if vp_ok else 'FAIL'})"
        + f"; OT mAUCC ratio x0/u {', '.join(f'{r:.3f}' for r in ratios)} (>= 0.95, {'ok' if ot_ok else 'FAIL'})"
        + f"; {dt / 60:.1f} min (< 15)"
    )
    assert report(7, vp_ok and ot_ok and dt < 900, detail)


def test_8_reweighting_equals_x0(report, runs):
    a = runs["vp_linear", "x0_from_native", 1][0].values
    b = runs["vp_linear", "inv_snr_eps", 1][0].values
    rel = float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-12))) if len(a) == len(b) else math.inf
    assert report(8, rel < 1e-6, f"seed 1 curves, max pointwise rel err {rel:.2e} (< 1e-6)")


def test_9_manifest_replay(report, tmp_path):
    small = ["--steps", "20", "--eval-every", "10", "--image-side", "8"]
    commands = {
        "identity-check": (["--n-random", "200", "--grad-batches", "2"], ["identities.csv"]),
        "sample": (["--n-chains", "16"], ["samples.csv"]),
        "train": (small, ["curve.csv"]),
        "compare": (small + ["--seeds", "1,2"], ["summary.csv", "arm0_eps_seed1.csv", "arm1_x0_from_native_seed2.csv"]),
    }
    bad = []
    for cmd, (flags, files) in commands.items():
        a, b = tmp_path / cmd / "a", tmp_path / cmd / "b"
        assert cli.main([cmd, "--out-dir", str(a), "--seed", "3", *flags]) == 0
        assert cli.main([cmd, "--out-dir", str(b), "--config", str(a / "manifest.ini")]) == 0
        for f in files + ["manifest.ini"]:
            if (a / f).read_bytes() != (b / f).read_bytes():
                bad.append(f"{cmd}/{f}")
    curve = tmp_path / "train" / "a" / "curve.csv"
    a, b = tmp_path / "maucc" / "a", tmp_path / "maucc" / "b"
    assert cli.main(["maucc", str(curve), "--out-dir", str(a)]) == 0
    assert cli.main(["maucc", "--out-dir", str(b), "--config", str(a / "manifest.ini")]) == 0
    if (a / "aucc.csv").read_bytes() != (b / "aucc.csv").read_bytes():
        bad.append("maucc/aucc.csv")
    ok = not bad
    assert report(9, ok, "identity-check, sample, train, compare, maucc replayed byte-identical" if ok else f"differ: {bad}")
