"""Reference sampling with MALA and generative sampling by reversing the noising SDE.

Generative samplers take a score function ``score_fn(x, t)`` that maps a batch
``x`` of shape ``(n, dim)`` at a scalar time ``t`` to ``grad log p_t(x)``;
:func:`net_score_fn` wraps a trained noise-prediction network this way.
"""
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DomainError, NumericalError, SingularityError
from .metrics import SampleSet

log = logging.getLogger(__name__)

METHODS = ("Euler", "PC")


class LowAcceptanceWarning(UserWarning):
    pass


@dataclass
class MalaConfig:
    step_size: float = 1e-3
    n_burn_in: int = 0
    n_samples: int = 1000
    thinning: int = 1
    init: list = None
    seed: int = 0
    zero_com: bool = False

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigError("MALA step_size must be positive")
        if self.thinning < 1:
            raise ConfigError("thinning must be at least 1")
        if self.n_burn_in < 0 or self.n_samples < 0:
            raise ConfigError("n_burn_in and n_samples must be non-negative")

    def to_dict(self):
        d = asdict(self)
        if d["init"] is not None:
            d["init"] = np.asarray(d["init"], dtype=np.float64).reshape(-1).tolist()
        return d


@dataclass
class MalaResult:
    positions: np.ndarray
    energies: np.ndarray
    forces: np.ndarray
    acceptance_rate: float
    warnings: list = field(default_factory=list)


def _center(v, spatial_dim):
    w = v.reshape(-1, spatial_dim)
    return (w - w.mean(axis=0)).reshape(v.shape)


def mala_sample(system, cfg):
    """Metropolis-adjusted Langevin chain targeting ``exp(-E / kT)``.

    Proposals are ``y = x + h * score(x) + sqrt(2h) * xi``. Proposals outside
    the system's domain, or with clashing particles, are rejected. With
    ``zero_com`` the noise is projected onto zero centre-of-mass motion, which
    keeps translation-invariant systems on a fixed-centroid slice.

    Frames are recorded every ``thinning`` steps after ``n_burn_in`` steps, in
    chain order. The acceptance rate covers the recorded part of the chain.
    """
    kT = system.kT
    h = cfg.step_size
    sd = system.spatial_dim
    x = np.zeros(system.dim) if cfg.init is None else np.array(cfg.init, dtype=np.float64).reshape(-1)
    if x.size != system.dim:
        raise DataError(f"MALA init has {x.size} coordinates, system needs {system.dim}")
    if cfg.zero_com:
        x = _center(x, sd)
    if not system.in_domain(x):
        raise DomainError("MALA init lies outside the system's domain")
    energy, force = system.energy_and_force(x)

    n_total = cfg.n_burn_in + cfg.n_samples * cfg.thinning
    positions = np.empty((cfg.n_samples, system.dim))
    energies = np.empty(cfg.n_samples)
    forces = np.empty((cfg.n_samples, system.dim))
    rng = np.random.default_rng(cfg.seed)
    noise_scale = math.sqrt(2.0 * h)
    inv4h = 1.0 / (4.0 * h)
    accepted = 0
    recorded_steps = 0
    chunk = 4096
    k = 0
    for step in range(n_total):
        if step % chunk == 0:
            xis = rng.normal(size=(min(chunk, n_total - step), system.dim))
            logu = np.log(rng.uniform(size=len(xis)))
        xi = xis[step % chunk]
        if cfg.zero_com:
            xi = _center(xi, sd)
        drift_x = x + (h / kT) * force
        y = drift_x + noise_scale * xi
        ok = False
        if system.in_domain(y):
            try:
                e_y, f_y = system.energy_and_force(y)
            except SingularityError:
                e_y = None
            if e_y is not None:
                fwd = y - drift_x
                rev = x - y - (h / kT) * f_y
                log_a = -(e_y - energy) / kT - inv4h * (rev @ rev - fwd @ fwd)
                ok = logu[step % chunk] < log_a
        if ok:
            x, energy, force = y, e_y, f_y
        if step >= cfg.n_burn_in:
            recorded_steps += 1
            accepted += ok
            if (step - cfg.n_burn_in + 1) % cfg.thinning == 0:
                positions[k] = x
                energies[k] = energy
                forces[k] = force
                k += 1

    rate = accepted / recorded_steps if recorded_steps else float("nan")
    notes = []
    if recorded_steps and rate < 0.1:
        msg = (
            f"MALA acceptance rate {rate:.3f} is below 0.1; "
            f"try a step size around {h * max(rate, 0.01) / 0.5:.3g} (currently {h:.3g})"
        )
        notes.append(msg)
        warnings.warn(msg, LowAcceptanceWarning, stacklevel=2)
    log.info("MALA: %d frames, acceptance %.3f", cfg.n_samples, rate)
    return MalaResult(positions, energies, forces, rate, notes)


@dataclass
class SamplerConfig:
    n_steps: int = 1000
    n_samples: int = 1000
    method: str = "PC"
    corrector_snr: float = 0.16
    corrector_steps: int = 1
    seed: int = 0
    zero_com: bool = False

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError("n_steps must be at least 1")
        if self.n_samples < 0:
            raise ConfigError("n_samples must be non-negative")
        if self.method not in METHODS:
            raise ConfigError(f"unknown sampler method {self.method!r}; expected one of {METHODS}")
        if not self.corrector_snr > 0:
            raise ConfigError("corrector_snr must be positive")
        if self.corrector_steps < 1:
            raise ConfigError("corrector_steps must be at least 1")

    def to_dict(self):
        return asdict(self)


def score_from_eps(eps_hat, sigma_t):
    """Convert a predicted noise into a score: ``-eps_hat / sigma_t``."""
    if not np.all(np.asarray(sigma_t) > 0):
        raise DomainError("sigma_t must be positive")
    return -np.asarray(eps_hat, dtype=np.float64) / sigma_t


def net_score_fn(net, schedule):
    """Score function backed by a noise-prediction network."""

    def score(x, t):
        return score_from_eps(net.forward(x, t), schedule.sigma(t))

    return score


def score_to_velocity(score, x, schedule, t):
    """Flow-matching velocity equivalent to a score at time ``t`` in (0, 1).

    ``v = (a'/a) x + s (a' s / a - s') * score`` with ``a, s`` the signal and
    noise scales and primes their time derivatives.
    """
    t = float(t)
    if schedule.kind == "VP" and not 0.0 < t < 1.0:
        raise DomainError("VP velocity is singular at t = 0 and t = 1")
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"diffusion time must lie in [0, 1], got {t}")
    score = np.asarray(score, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    a, s = schedule.coeffs(t)
    da, ds = schedule.dcoeffs(t)
    return (da / a) * x + s * (da * s / a - ds) * score


def _noise(rng, shape, zero_com, spatial_dim):
    z = rng.normal(size=shape)
    if zero_com:
        z = z.reshape(shape[0], -1, spatial_dim)
        z = (z - z.mean(axis=1, keepdims=True)).reshape(shape)
    return z


def _check_finite(x, step, t):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"sampler state became non-finite at step {step} (t = {t:.6g})")


def langevin_corrector(score_fn, x, t, snr, n_steps, rng, zero_com=False, spatial_dim=1):
    """Langevin steps ``x <- x + eta * score + sqrt(2 eta) z`` at fixed ``t``.

    ``eta = 2 (snr * |z| / |score|)^2`` where the norms are per-sample norms
    averaged over the batch.
    """
    for _ in range(n_steps):
        s = score_fn(x, t)
        z = _noise(rng, x.shape, zero_com, spatial_dim)
        s_norm = np.mean(np.linalg.norm(s.reshape(len(s), -1), axis=1))
        z_norm = np.mean(np.linalg.norm(z.reshape(len(z), -1), axis=1))
        if s_norm == 0:
            continue
        eta = 2.0 * (snr * z_norm / s_norm) ** 2
        x = x + eta * s + math.sqrt(2.0 * eta) * z
    return x


def _reverse(score_fn, schedule, cfg, n_particles, spatial_dim, corrector):
    dim = n_particles * spatial_dim
    rng = np.random.default_rng(cfg.seed)
    if cfg.n_samples == 0:
        return SampleSet(np.empty((0, dim)), n_particles, spatial_dim, labels={"method": cfg.method})
    x = schedule.prior_std() * _noise(rng, (cfg.n_samples, dim), cfg.zero_com, spatial_dim)
    n = cfg.n_steps
    dt = 1.0 / n
    for i in range(n):
        t = 1.0 - i * dt
        drift_scale, g = schedule.sde_coeffs(t)
        s = score_fn(x, t)
        x_mean = x - (drift_scale * x - g * g * s) * dt
        if i == n - 1:
            x = x_mean
        else:
            x = x_mean + g * math.sqrt(dt) * _noise(rng, x.shape, cfg.zero_com, spatial_dim)
        _check_finite(x, i, t)
        if corrector and i < n - 1:
            t_next = 1.0 - (i + 1) * dt
            x = langevin_corrector(
                score_fn, x, t_next, cfg.corrector_snr, cfg.corrector_steps, rng, cfg.zero_com, spatial_dim
            )
            _check_finite(x, i, t_next)
    return SampleSet(x, n_particles, spatial_dim, labels={"method": cfg.method, "n_steps": n})


def euler_reverse(score_fn, schedule, cfg, n_particles=1, spatial_dim=1):
    """Euler-Maruyama integration of the reverse SDE from t = 1 to t = 0.

    The chains start from ``N(0, sigma_max^2 I)`` for VE and ``N(0, I)`` for
    VP, take ``n_steps`` uniform steps and drop the noise on the last one.
    """
    return _reverse(score_fn, schedule, cfg, n_particles, spatial_dim, corrector=False)


def pc_sample(score_fn, schedule, cfg, n_particles=1, spatial_dim=1):
    """Predictor-corrector sampler: each Euler step is followed by Langevin corrector steps."""
    return _reverse(score_fn, schedule, cfg, n_particles, spatial_dim, corrector=True)


def sample(score_fn, schedule, cfg, n_particles=1, spatial_dim=1):
    fn = pc_sample if cfg.method == "PC" else euler_reverse
    return fn(score_fn, schedule, cfg, n_particles, spatial_dim)
