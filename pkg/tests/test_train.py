import numpy as np
import pytest

from psmlab.errors import ConfigError, DataError
from psmlab.net import AdamState, ScoreNet
from psmlab.schedule import NoiseSchedule
from psmlab.train import LossSpec, TrainConfig, omega, remove_particle_mean, target_epsilon, train_run

VE = NoiseSchedule.ve(0.1, 5.0)


def test_omega_examples():
    spec = LossSpec("PiecewiseWeighted")
    assert omega(spec, 0.05) == pytest.approx(0.5, abs=1e-15)
    assert omega(spec, 0.0) == pytest.approx(1.0 / (1.0 + np.exp(-2.5)), rel=1e-12)
    assert omega(spec, 0.0) == pytest.approx(0.92414, abs=1e-5)
    assert omega(spec, 0.2) == 0.0
    assert omega(spec, 0.1) == 0.0


def test_omega_is_non_increasing():
    t = np.linspace(0, 1, 2001)
    w = omega(LossSpec("PiecewiseWeighted"), t)
    assert np.all(np.diff(w) <= 0)


def test_dsm_target_is_noise():
    eps = np.array([[0.3, -1.2, 2.0]])
    out = target_epsilon(LossSpec("DSM"), VE, np.zeros((1, 3)), np.zeros((1, 3)), eps, None, np.array([0.3]))
    assert np.array_equal(out, eps)


def test_psm_target_example():
    # a time where the VE noise scale is exactly 0.5
    t = np.log(5.0) / np.log(50.0)
    assert VE.sigma(t) == pytest.approx(0.5, rel=1e-12)
    f = np.array([[2.0, 0.0, 0.0]])
    out = target_epsilon(LossSpec("PSM"), VE, np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 3)), f, np.array([t]))
    assert np.allclose(out, [[-1.0, 0.0, 0.0]], atol=1e-12)


def test_weighted_target_is_convex_combination():
    spec = LossSpec("PiecewiseWeighted")
    t = np.array([0.05])
    sigma = VE.sigma(0.05)
    eps = np.array([[1.0, -1.0]])
    # a force whose target is exactly -eps, so the 50/50 blend cancels
    f = eps / sigma
    out = target_epsilon(spec, VE, np.zeros((1, 2)), np.zeros((1, 2)), eps, f, t)
    assert np.allclose(out, [[0.0, 0.0]], atol=1e-12)


def test_piecewise_is_bit_identical_to_branches():
    rng = np.random.default_rng(3)
    n = 200
    t = rng.uniform(size=n)
    eps = rng.normal(size=(n, 2))
    f = rng.normal(size=(n, 2))
    x0 = rng.normal(size=(n, 2))
    pw = target_epsilon(LossSpec("Piecewise"), VE, x0, x0, eps, f, t)
    psm = target_epsilon(LossSpec("PSM"), VE, x0, x0, eps, f, t)
    dsm = target_epsilon(LossSpec("DSM"), VE, x0, x0, eps, f, t)
    low = t < 0.05
    assert low.any() and (~low).any()
    assert np.array_equal(pw[low], psm[low])
    assert np.array_equal(pw[~low], dsm[~low])


def test_targets_agree_in_expectation_for_gaussian():
    # For N(0, 1) data, E[eps | x_t] equals the PSM target averaged over the posterior,
    # so regressing each on x_t gives the same slope.
    rng = np.random.default_rng(0)
    n = 400_000
    t = 0.3
    sigma = VE.sigma(t)
    x0 = rng.normal(size=(n, 1))
    eps = rng.normal(size=(n, 1))
    xt = x0 + sigma * eps
    ts = np.full(n, t)
    dsm = target_epsilon(LossSpec("DSM"), VE, x0, xt, eps, -x0, ts)
    psm = target_epsilon(LossSpec("PSM"), VE, x0, xt, eps, -x0, ts)
    slope_d = np.sum(dsm * xt) / np.sum(xt * xt)
    slope_p = np.sum(psm * xt) / np.sum(xt * xt)
    exact = sigma / (1.0 + sigma**2)
    assert slope_d == pytest.approx(exact, rel=0.02)
    assert slope_p == pytest.approx(exact, rel=0.02)


def test_psm_target_has_smaller_variance_at_small_t():
    rng = np.random.default_rng(1)
    n = 100_000
    x0 = rng.normal(size=(n, 1))
    eps = rng.normal(size=(n, 1))
    ts = np.full(n, 0.01)
    dsm = target_epsilon(LossSpec("DSM"), VE, x0, x0, eps, -x0, ts)
    psm = target_epsilon(LossSpec("PSM"), VE, x0, x0, eps, -x0, ts)
    assert psm.var() < 0.05 * dsm.var()


def test_missing_force_rejected():
    with pytest.raises(DataError):
        target_epsilon(LossSpec("PSM"), VE, np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), None, np.array([0.1]))


def test_loss_spec_validation():
    with pytest.raises(ConfigError):
        LossSpec("Other")
    with pytest.raises(ConfigError):
        LossSpec("Piecewise", t_p=0.0)
    with pytest.raises(ConfigError):
        LossSpec("PiecewiseWeighted", omega_slope=-1.0)


def _data(n=64, d=2, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    return x, -x


def test_zero_epochs_leaves_net_unchanged():
    x, f = _data()
    net = ScoreNet(2, (16, 16), 8, seed=1)
    before = [p.copy() for p in net.params]
    res = train_run(TrainConfig(epochs=0, batch_size=16), x, f, net)
    assert res.history == []
    for a, b in zip(before, res.net.params):
        assert np.array_equal(a, b)


def test_psm_family_without_forces_is_refused():
    x, _ = _data()
    for variant in ("PSM", "Piecewise", "PiecewiseWeighted"):
        with pytest.raises(ConfigError):
            train_run(TrainConfig(epochs=1, loss=LossSpec(variant)), x, None, ScoreNet(2, (8,), 8))
    res = train_run(TrainConfig(epochs=1, batch_size=16, loss=LossSpec("DSM")), x, None, ScoreNet(2, (8,), 8))
    assert len(res.history) == 1


def test_training_reduces_loss():
    x, f = _data(n=256)
    cfg = TrainConfig(epochs=40, batch_size=32, lr=3e-3, loss=LossSpec("DSM"))
    res = train_run(cfg, x, f, ScoreNet(2, (32, 32), 8, seed=0))
    first = np.mean([l for _, l in res.history[:5]])
    last = np.mean([l for _, l in res.history[-5:]])
    assert last < first
    assert res.best_epoch >= 0
    assert min(l for _, l in res.history) == res.history[res.best_epoch][1]


def test_resume_reproduces_uninterrupted_run():
    x, f = _data(n=96)
    cfg = TrainConfig(epochs=4, batch_size=32, lr=1e-3, loss=LossSpec("Piecewise"))
    full = train_run(cfg, x, f, ScoreNet(2, (16, 16), 8, seed=5))

    # stop after two epochs while keeping the four-epoch learning-rate horizon
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay, max_epochs=cfg.epochs)
    head = TrainConfig(**{**cfg.__dict__, "epochs": 2})
    a = train_run(head, x, f, ScoreNet(2, (16, 16), 8, seed=5), state=state)
    rng = np.random.default_rng()
    rng.bit_generator.state = a.rng_state
    b = train_run(cfg, x, f, a.net, state=a.state, rng=rng, start_epoch=2)
    for p, q in zip(full.net.params, b.net.params):
        assert np.array_equal(p, q)
    assert [l for _, l in full.history] == [l for _, l in a.history + b.history]


def test_remove_particle_mean():
    v = np.arange(12, dtype=float).reshape(2, 6)
    out = remove_particle_mean(v, 3)
    assert np.allclose(out.reshape(2, 2, 3).sum(axis=1), 0.0)


def test_train_config_round_trip():
    cfg = TrainConfig(epochs=3, loss=LossSpec("PiecewiseWeighted"), schedule=NoiseSchedule.vp())
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
