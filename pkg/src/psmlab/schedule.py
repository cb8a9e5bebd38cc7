"""Forward noising processes: variance-exploding and variance-preserving SDEs.

Both are parameterised so that ``x_t = alpha(t) * x_0 + sigma(t) * eps`` with
``eps ~ N(0, I)``.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataError, DomainError


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = "VE"
    sigma_min: float = 0.1
    sigma_max: float = 5.0
    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if self.kind not in ("VE", "VP"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}; expected 'VE' or 'VP'")
        if self.kind == "VE" and not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError("VE schedule needs 0 < sigma_min < sigma_max")
        if self.kind == "VP" and not 0 < self.beta_min < self.beta_max:
            raise ConfigError("VP schedule needs 0 < beta_min < beta_max")

    @classmethod
    def ve(cls, sigma_min=0.1, sigma_max=5.0):
        return cls("VE", sigma_min=sigma_min, sigma_max=sigma_max)

    @classmethod
    def vp(cls, beta_min=0.1, beta_max=20.0):
        return cls("VP", beta_min=beta_min, beta_max=beta_max)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @property
    def log_ratio(self):
        return np.log(self.sigma_max / self.sigma_min)

    def _beta_integral(self, t):
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def beta(self, t):
        t = _check_time(t)
        return _scalarize(self.beta_min + (self.beta_max - self.beta_min) * t)[0]

    def alpha(self, t):
        return self.coeffs(t)[0]

    def sigma(self, t):
        return self.coeffs(t)[1]

    def coeffs(self, t):
        """Return ``(alpha_t, sigma_t)``; vectorised over ``t``."""
        t = _check_time(t)
        if self.kind == "VE":
            sigma = self.sigma_min * (self.sigma_max / self.sigma_min) ** t
            return _scalarize(np.ones_like(sigma), sigma)
        big_b = self._beta_integral(t)
        return _scalarize(np.exp(-0.5 * big_b), np.sqrt(-np.expm1(-big_b)))

    def sde_coeffs(self, t):
        """Return ``(drift_scale, diffusion)`` so that ``dx = drift_scale * x dt + diffusion dW``."""
        t = _check_time(t)
        if self.kind == "VE":
            sigma = self.sigma_min * (self.sigma_max / self.sigma_min) ** t
            return _scalarize(np.zeros_like(sigma), sigma * np.sqrt(2.0 * self.log_ratio))
        beta = self.beta_min + (self.beta_max - self.beta_min) * t
        return _scalarize(-0.5 * beta, np.sqrt(beta))

    def dcoeffs(self, t):
        """Time derivatives ``(d alpha/dt, d sigma/dt)``."""
        t = _check_time(t)
        if self.kind == "VE":
            sigma = self.sigma_min * (self.sigma_max / self.sigma_min) ** t
            return _scalarize(np.zeros_like(sigma), sigma * self.log_ratio)
        big_b = self._beta_integral(t)
        beta = self.beta_min + (self.beta_max - self.beta_min) * t
        alpha = np.exp(-0.5 * big_b)
        with np.errstate(divide="ignore"):
            dsigma = 0.5 * beta * np.exp(-big_b) / np.sqrt(-np.expm1(-big_b))
        return _scalarize(-0.5 * beta * alpha, dsigma)

    def prior_std(self):
        """Standard deviation of the reference distribution at ``t = 1``."""
        return self.sigma_max if self.kind == "VE" else 1.0


def _scalarize(*arrays):
    return tuple(float(a) if np.ndim(a) == 0 else a for a in arrays)


def _check_time(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any((t < 0.0) | (t > 1.0)) or np.any(np.isnan(t)):
        raise DomainError(f"diffusion time must lie in [0, 1], got {t}")
    return t


def coeffs(schedule, t):
    return schedule.coeffs(t)


def sde_coeffs(schedule, t):
    return schedule.sde_coeffs(t)


def perturb(schedule, x0, t, noise):
    """Noise clean configurations to time ``t``: ``alpha_t * x0 + sigma_t * noise``.

    ``t`` may be a scalar or one time per row of ``x0``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise DataError(f"noise shape {noise.shape} does not match x0 shape {x0.shape}")
    alpha, sigma = schedule.coeffs(t)
    if np.ndim(alpha) == 1 and x0.ndim > 1:
        alpha = alpha.reshape((-1,) + (1,) * (x0.ndim - 1))
        sigma = sigma.reshape(alpha.shape)
    return alpha * x0 + sigma * noise
