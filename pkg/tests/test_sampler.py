import math

import numpy as np
import pytest

from x0lab.errors import GammaOverflowError
from x0lab.oracle import GaussianData, make_predictor, posterior_mean
from x0lab.param import Prediction, convert
from x0lab.sampler import SamplerConfig, chain_noise, ddpm_gamma, reverse_step, sample, sampling_times
from x0lab.schedule import OTFlow, Schedule, VPCosine, get_schedule

COS, OT = VPCosine(), OTFlow()


def exact_chain_moments(s, cfg, mu, var):
    """Mean and variance of the discretized sampler for scalar N(mu, var) data.

    With the exact posterior mean every update is affine in x:
    x_prev = a x + b + gamma z, so the moments follow a scalar recursion.
    """
    times = sampling_times(s, cfg.n_steps)
    m, v = 0.0, 1.0
    for t, tp in zip(times[:-1], times[1:]):
        al, sg = float(s.alpha(t)), float(s.sigma(t))
        ap, sp = float(s.alpha(tp)), float(s.sigma(tp))
        gain = al * var / (al * al * var + sg * sg)  # x0_hat = mu + gain (x - al mu)
        c_x, c_0 = gain, mu - gain * al * mu
        if cfg.kind == "euler_flow":
            ad, sd = float(s.alpha_dot(t)), float(s.sigma_dot(t))
            k = (ad * sg - al * sd) / sg
            a = 1.0 - (t - tp) * (k * c_x + sd / sg)
            b = -(t - tp) * k * c_0
            g = 0.0
        else:
            g = ddpm_gamma(s, t, tp) if cfg.kind == "ddpm" else 0.0
            r = math.sqrt(max(sp * sp - g * g, 0.0))
            a = ap * c_x + r * (1.0 - al * c_x) / sg
            b = ap * c_0 - r * al * c_0 / sg
        m, v = a * m + b, a * a * v + g * g
    return m, v


def test_point_mass_chain_terminates():
    c = np.array([0.7, -1.3, 2.0])
    d = GaussianData(c, np.full(3, 1e-18))
    for kind in ("ddim", "ddpm"):
        x = sample(make_predictor(d, COS), SamplerConfig(kind, 25, seed=4), COS, (6, 3))
        np.testing.assert_allclose(x, np.broadcast_to(c, x.shape), atol=1e-6)


def test_single_ddim_step_formula():
    c = 1.5
    d = GaussianData(np.array([c]), np.array([1e-18]))
    x = np.array([[0.4]])
    t, tp = 0.8, 0.5
    out = reverse_step(x, posterior_mean(d, x, t, COS), t, tp, SamplerConfig("ddim"), COS)
    eps_hat = (x - float(COS.alpha(t)) * c) / float(COS.sigma(t))
    np.testing.assert_allclose(out, float(COS.alpha(tp)) * c + float(COS.sigma(tp)) * eps_hat, rtol=1e-12)


def test_step_to_zero_returns_x0_hat():
    p = Prediction("eps", np.array([0.3, -0.2]), 0.4, np.array([1.0, 2.0]))
    out = reverse_step(p.state, p, 0.4, 0.0, SamplerConfig("ddim"), COS)
    assert np.array_equal(out, convert(p, "x0", COS).value)


def test_full_stochasticity_drops_eps_term():
    s = OTFlow((0.0, 1.0))
    t, tp = 1.0, 0.6
    assert ddpm_gamma(s, t, tp) == pytest.approx(float(s.sigma(tp)), rel=1e-15)
    p = Prediction("x0", np.array([0.5]), t, np.array([3.0]))
    z = np.array([0.25])
    out = reverse_step(p.state, p, t, tp, SamplerConfig("ddpm"), s, noise=z)
    np.testing.assert_allclose(out, float(s.alpha(tp)) * 0.5 + float(s.sigma(tp)) * z, rtol=1e-14)


def test_one_step_ddim_returns_oracle_x0_hat():
    d = GaussianData(np.array([0.2, -0.4]), np.array([1.0, 0.5]))
    cfg = SamplerConfig("ddim", 1, seed=9)
    x = sample(make_predictor(d, COS), cfg, COS, (5, 2))
    x_T = chain_noise(9, 5, 1, (2,))[0]
    np.testing.assert_allclose(x, posterior_mean(d, x_T, COS.t_max, COS).value, rtol=1e-12)


class _Bumpy(Schedule):
    # sigma dips at t = 0.5, which makes gamma exceed sigma_prev
    kind = "bumpy"

    def alpha(self, t):
        return np.asarray(np.where(np.asarray(t) >= 0.5, 0.1, 0.9), dtype=float)

    def sigma(self, t):
        return np.asarray(np.where(np.asarray(t) >= 0.5, 0.05, 0.9), dtype=float)


def test_gamma_overflow():
    s = _Bumpy()
    p = Prediction("x0", np.zeros(1), 0.5, np.zeros(1))
    with pytest.raises(GammaOverflowError):
        reverse_step(np.zeros(1), p, 0.5, 0.2, SamplerConfig("ddpm"), s, noise=np.zeros(1))


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig("heun")
    with pytest.raises(ValueError):
        SamplerConfig("ddim", 0)
    with pytest.raises(ValueError):
        SamplerConfig("ddim", eta_mode="ddpm_gamma")
    assert SamplerConfig("ddpm").eta_mode == "ddpm_gamma"
    with pytest.raises(ValueError):
        reverse_step(np.zeros(1), Prediction("x0", np.zeros(1), 0.3, np.zeros(1)), 0.3, 0.5, SamplerConfig(), COS)


def test_determinism_and_chain_independence():
    d = GaussianData(np.zeros(3), np.ones(3))
    f = make_predictor(d, COS)
    cfg = SamplerConfig("ddpm", 10, seed=3)
    a = sample(f, cfg, COS, (8, 3))
    b = sample(f, cfg, COS, (8, 3))
    assert np.array_equal(a, b)
    # chain i does not depend on how many chains run alongside it
    c = sample(f, cfg, COS, (3, 3))
    assert np.array_equal(a[:3], c)


def test_trajectory_shape():
    d = GaussianData(np.zeros(2), np.ones(2))
    x, traj = sample(make_predictor(d, OT), SamplerConfig("euler_flow", 7), OT, (4, 2), return_trajectory=True)
    assert traj.shape == (8, 4, 2)
    assert np.array_equal(traj[-1], x)


@pytest.mark.parametrize(
    "name,kind,steps",
    [("vp_cosine", "ddim", 50), ("vp_cosine", "ddpm", 50), ("ot_flow", "euler_flow", 200), ("vp_linear", "ddim", 50)],
)
def test_monte_carlo_matches_exact_discrete_chain(name, kind, steps):
    s = get_schedule(name)
    mu = np.array([0.5, -1.0, 0.0, 2.0])
    var = np.array([0.25, 1.0, 2.0, 4.0])
    d = GaussianData(mu, var)
    cfg = SamplerConfig(kind, steps, seed=21)
    n = 10_000
    x = sample(make_predictor(d, s), cfg, s, (n, 4))
    for j in range(4):
        m, v = exact_chain_moments(s, cfg, mu[j], var[j])
        assert abs(x[:, j].mean() - m) < 3.5 * math.sqrt(v / n)
        # sample variance SE is about v * sqrt(2 / n)
        assert abs(x[:, j].var(ddof=1) / v - 1) < 4 * math.sqrt(2 / n)


def test_discretized_variance_converges_to_data_variance():
    # the DDIM variance shortfall is a discretization effect: it vanishes as steps grow
    gaps = [abs(exact_chain_moments(COS, SamplerConfig("ddim", n), 0.0, 1.0)[1] - 1.0) for n in (50, 200, 1000)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.01
