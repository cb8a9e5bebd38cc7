"""Training targets for DSM / PSM / Piecewise / Piecewise-Weighted and the training loop.

All variants train the same noise-prediction network. They differ only in
the regression target for a sample ``(x0, eps, t)``:

* DSM: the injected noise ``eps``.
* PSM: the force label rescaled to noise units, ``-(sigma_t / alpha_t) F(x0) / kT``.
* Piecewise: PSM for ``t < t_p``, DSM otherwise.
* PiecewiseWeighted: ``(1 - w_t) * eps + w_t * PSM`` with a sigmoid weight ``w_t``.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .net import AdamState, adam_step
from .schedule import NoiseSchedule, perturb

log = logging.getLogger(__name__)

VARIANTS = ("DSM", "PSM", "Piecewise", "PiecewiseWeighted")


@dataclass(frozen=True)
class LossSpec:
    variant: str = "Piecewise"
    t_p: float = 0.05
    omega_slope: float = 50.0
    omega_center: float = 0.05
    omega_cutoff: float = 0.1
    time_weight: str = "constant_one"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown loss variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "Piecewise" and not 0.0 < self.t_p < 1.0:
            raise ConfigError("Piecewise loss needs 0 < t_p < 1")
        if self.omega_slope < 0:
            raise ConfigError("omega_slope must be non-negative so that the weight is non-increasing")
        if self.time_weight != "constant_one":
            raise ConfigError("only the constant time weight lambda(t) = 1 is supported")

    @property
    def needs_forces(self):
        return self.variant != "DSM"


def omega(spec, t):
    """Weight of the force target: ``1 / (1 + exp(slope * (t - center)))`` below the cutoff, 0 from it on."""
    t = np.asarray(t, dtype=np.float64)
    w = 0.5 * (1.0 - np.tanh(0.5 * spec.omega_slope * (t - spec.omega_center)))
    w = np.where(t < spec.omega_cutoff, w, 0.0)
    return float(w) if w.ndim == 0 else w


def time_weight(spec, t):
    return np.ones_like(np.asarray(t, dtype=np.float64))


def _rows(a, n):
    """Reshape per-sample scalars so they broadcast against ``(n, ...)`` arrays."""
    a = np.asarray(a, dtype=np.float64)
    return a.reshape((-1,) + (1,) * (n - 1)) if a.ndim == 1 else a


def target_epsilon(spec, schedule, x0, x_t, noise, force, t, kT=1.0):
    """Regression target for the noise network at diffusion time(s) ``t``."""
    if kT <= 0:
        raise ConfigError("kT must be positive")
    noise = np.asarray(noise, dtype=np.float64)
    if spec.variant == "DSM":
        return noise
    if force is None:
        raise DataError(f"loss variant {spec.variant} needs force labels")
    force = np.asarray(force, dtype=np.float64)
    alpha, sigma = schedule.coeffs(t)
    alpha = _rows(alpha, noise.ndim)
    sigma = _rows(sigma, noise.ndim)
    psm = -(sigma / alpha) * force / kT
    if spec.variant == "PSM":
        return psm
    t_rows = _rows(t, noise.ndim)
    if spec.variant == "Piecewise":
        return np.where(t_rows < spec.t_p, psm, noise)
    w = _rows(omega(spec, t), noise.ndim)
    return (1.0 - w) * noise + w * psm


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 64
    seed: int = 42
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    loss: LossSpec = field(default_factory=LossSpec)
    lr: float = 2e-4
    weight_decay: float = 5e-7
    zero_com: bool = False
    spatial_dim: int = 3

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["schedule"] = self.schedule.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "schedule" in d:
            d["schedule"] = NoiseSchedule.from_dict(d["schedule"])
        if "loss" in d:
            d["loss"] = LossSpec(**d["loss"])
        return cls(**d)


@dataclass
class TrainResult:
    net: object
    best_net: object
    best_epoch: int
    history: list
    state: AdamState
    rng_state: dict


def remove_particle_mean(v, spatial_dim):
    """Project per-particle vectors onto the zero centre-of-mass subspace (rows are flattened frames)."""
    shape = v.shape
    v = v.reshape(shape[0], -1, spatial_dim)
    return (v - v.mean(axis=1, keepdims=True)).reshape(shape)


def train_run(config, positions, forces, net, kT=1.0, state=None, rng=None, start_epoch=0, callback=None):
    """Run the training loop; returns a :class:`TrainResult`.

    ``state``/``rng``/``start_epoch`` resume a previous run exactly. Per
    batch element ``t ~ U(0, 1)`` and ``eps ~ N(0, I)`` are drawn, targets are
    built with :func:`target_epsilon` and one AdamW step is taken.
    """
    x_all = np.asarray(positions, dtype=np.float64).reshape(len(positions), -1)
    if len(x_all) == 0:
        raise DataError("training set is empty")
    if x_all.shape[1] != net.input_dim:
        raise DataError(f"data dimension {x_all.shape[1]} does not match network input {net.input_dim}")
    spec = config.loss
    f_all = None
    if spec.needs_forces:
        if forces is None:
            raise ConfigError(f"loss variant {spec.variant} needs force labels but the data has none")
        f_all = np.asarray(forces, dtype=np.float64).reshape(x_all.shape)
    if kT <= 0:
        raise ConfigError("kT must be positive")

    rng = np.random.default_rng(config.seed) if rng is None else rng
    if state is None:
        state = AdamState(lr=config.lr, weight_decay=config.weight_decay, max_epochs=config.epochs)
    sched = config.schedule
    n = len(x_all)
    history = []
    best_loss = np.inf
    best_net = net.copy()
    best_epoch = start_epoch - 1

    for epoch in range(start_epoch, config.epochs):
        state.set_epoch(epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x0 = x_all[idx]
            b = len(idx)
            t = rng.uniform(0.0, 1.0, size=b)
            eps = rng.normal(size=x0.shape)
            if config.zero_com:
                eps = remove_particle_mean(eps, config.spatial_dim)
            x_t = perturb(sched, x0, t, eps)
            target = target_epsilon(spec, sched, x0, x_t, eps, None if f_all is None else f_all[idx], t, kT)
            loss, grads = net.loss_and_grad(x_t, t, target, time_weight(spec, t))
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at optimiser step {state.step} (epoch {epoch})")
            adam_step(state, net, grads)
            total += loss * b
        mean_loss = total / n
        history.append((epoch, mean_loss))
        if mean_loss < best_loss:
            best_loss = mean_loss
            best_epoch = epoch
            best_net = net.copy()
        if callback is not None:
            callback(epoch, mean_loss)
    if history:
        log.info("trained %d epochs, final loss %.5g, best %.5g at epoch %d", len(history), history[-1][1], best_loss, best_epoch)
    return TrainResult(net, best_net, best_epoch, history, state, rng.bit_generator.state)
