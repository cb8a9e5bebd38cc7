import math

import numpy as np
import pytest

from psmlab.errors import DataError, DomainError, ConfigError
from psmlab.schedule import NoiseSchedule, coeffs, perturb, sde_coeffs

VE = NoiseSchedule.ve(0.1, 5.0)
VP = NoiseSchedule.vp(0.1, 20.0)


def test_ve_endpoints_and_midpoint():
    assert coeffs(VE, 0.0) == (1.0, pytest.approx(0.1, abs=1e-15))
    alpha, sigma = coeffs(VE, 0.5)
    assert alpha == 1.0
    assert sigma == pytest.approx(0.1 * math.sqrt(50.0), rel=1e-14)
    assert sigma == pytest.approx(0.70711, abs=1e-5)
    assert coeffs(VE, 1.0)[1] == pytest.approx(5.0, rel=1e-14)


def test_vp_at_one():
    big_b = 0.1 + 0.5 * (20.0 - 0.1)
    assert big_b == pytest.approx(10.05)
    alpha, sigma = coeffs(VP, 1.0)
    assert alpha == pytest.approx(math.exp(-5.025), rel=1e-12)
    assert alpha == pytest.approx(0.0065716, abs=1e-7)
    assert sigma == pytest.approx(math.sqrt(1 - math.exp(-10.05)), rel=1e-12)
    assert sigma == pytest.approx(0.999978, abs=1e-6)


def test_sde_coefficients():
    drift, g = sde_coeffs(VE, 0.0)
    assert drift == 0.0
    assert g == pytest.approx(0.1 * math.sqrt(2 * math.log(50)), rel=1e-14)
    assert g == pytest.approx(0.279715, abs=1e-6)
    drift, g = sde_coeffs(VP, 0.0)
    assert drift == pytest.approx(-0.05)
    assert g == pytest.approx(math.sqrt(0.1))
    drifts, _ = sde_coeffs(VE, np.linspace(0, 1, 11))
    assert np.all(drifts == 0.0)


def test_ve_diffusion_matches_derivative_of_variance():
    # g(t)^2 = d sigma^2 / dt, checked by central differences
    t = np.linspace(0.01, 0.99, 50)
    h = 1e-6
    dvar = (VE.sigma(t + h) ** 2 - VE.sigma(t - h) ** 2) / (2 * h)
    assert np.allclose(VE.sde_coeffs(t)[1] ** 2, dvar, rtol=1e-7)


def test_vp_marginal_variance_consistent_with_sde():
    # d(sigma^2)/dt = -beta sigma^2 + beta for the VP SDE started at a point
    t = np.linspace(0.01, 0.99, 50)
    h = 1e-6
    dvar = (VP.sigma(t + h) ** 2 - VP.sigma(t - h) ** 2) / (2 * h)
    beta = VP.beta(t)
    assert np.allclose(dvar, beta * (1 - VP.sigma(t) ** 2), rtol=1e-6)


@pytest.mark.parametrize("sched", [VE, VP, NoiseSchedule.ve(0.01, 8.0)])
def test_sigma_strictly_increasing(sched):
    sig = sched.sigma(np.linspace(0, 1, 1000))
    assert np.all(np.diff(sig) > 0)


def test_vp_identity():
    alpha, sigma = VP.coeffs(np.linspace(0, 1, 1001))
    assert np.max(np.abs(alpha**2 + sigma**2 - 1)) < 1e-12
    assert np.all(np.diff(alpha) < 0)
    assert alpha[0] == 1.0


def test_time_outside_unit_interval_rejected():
    with pytest.raises(DomainError):
        VE.coeffs(1.5)
    with pytest.raises(DomainError):
        VP.sde_coeffs(-0.1)


def test_invalid_schedule_parameters():
    with pytest.raises(ConfigError):
        NoiseSchedule.ve(5.0, 0.1)
    with pytest.raises(ConfigError):
        NoiseSchedule.vp(0.0, 20.0)
    with pytest.raises(ConfigError):
        NoiseSchedule("subVP")


def test_perturb_examples():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(4, 3))
    noise = rng.normal(size=(4, 3))
    assert np.array_equal(perturb(VP, x0, 0.0, noise), x0)
    unit = np.array([1.0, 0.0, 0.0])
    assert np.allclose(perturb(VE, np.zeros(3), 1.0, unit), 5.0 * unit)
    assert np.array_equal(perturb(VE, x0, 0.37, np.zeros_like(x0)), x0)
    with pytest.raises(DataError):
        perturb(VE, x0, 0.5, noise[:, :2])


def test_perturb_per_row_times():
    x0 = np.ones((3, 2))
    noise = np.ones((3, 2))
    t = np.array([0.0, 0.5, 1.0])
    out = perturb(VE, x0, t, noise)
    assert np.allclose(out[:, 0], 1.0 + VE.sigma(t))


@pytest.mark.parametrize("sched,t", [(VE, 0.3), (VP, 0.6)])
def test_perturb_distribution(sched, t):
    rng = np.random.default_rng(1)
    n = 100_000
    x0 = np.full((n, 1), 0.8)
    xt = perturb(sched, x0, t, rng.normal(size=(n, 1)))
    alpha, sigma = sched.coeffs(t)
    se_mean = sigma / math.sqrt(n)
    se_var = sigma**2 * math.sqrt(2 / (n - 1))
    assert abs(xt.mean() - alpha * 0.8) < 3 * se_mean
    assert abs(xt.var(ddof=1) - sigma**2) < 3 * se_var


def test_schedule_json_round_trip():
    assert NoiseSchedule.from_dict(VP.to_dict()) == VP
