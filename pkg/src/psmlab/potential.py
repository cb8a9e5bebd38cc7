"""Analytic potentials supplying energies, force labels and Boltzmann densities.

Every system exposes ``energy(x)`` and ``force(x) = -grad energy(x)`` on a
flattened coordinate vector, plus ``score(x) = force(x) / kT``, the gradient
of the log Boltzmann density ``exp(-energy / kT)``.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError, SingularityError


class PotentialSystem:
    """Interface shared by the analytic systems."""

    kind = None
    kT = 1.0
    dim = 1
    n_particles = 1
    spatial_dim = 1

    def energy(self, x):
        raise NotImplementedError

    def force(self, x):
        raise NotImplementedError

    def energy_and_force(self, x):
        return self.energy(x), self.force(x)

    def score(self, x):
        return self.force(x) / self.kT

    def log_density(self, x):
        """Unnormalised log Boltzmann density."""
        return -self.energy(x) / self.kT

    def in_domain(self, x):
        return True

    def energies(self, xs):
        return np.array([self.energy(x) for x in np.asarray(xs, dtype=np.float64)])

    def forces(self, xs):
        return np.array([self.force(x) for x in np.asarray(xs, dtype=np.float64)])

    def to_dict(self):
        raise NotImplementedError


@dataclass
class GaussianWell(PotentialSystem):
    """Harmonic well ``E(x) = |x - mean|^2 / (2 std^2)``; its Boltzmann law at kT=1 is N(mean, std^2)."""

    dim: int = 1
    mean: float = 0.0
    std: float = 1.0
    kT: float = 1.0
    kind = "GaussianWell"

    def __post_init__(self):
        if self.std <= 0:
            raise ConfigError("GaussianWell std must be positive")
        if self.kT <= 0:
            raise ConfigError("kT must be positive")
        self.spatial_dim = self.dim
        self.n_particles = 1

    def energy(self, x):
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * float(np.sum((x - self.mean) ** 2)) / self.std**2

    def force(self, x):
        x = np.asarray(x, dtype=np.float64)
        return -(x - self.mean) / self.std**2

    def energies(self, xs):
        xs = np.asarray(xs, dtype=np.float64).reshape(-1, self.dim)
        return 0.5 * np.sum((xs - self.mean) ** 2, axis=1) / self.std**2

    def forces(self, xs):
        xs = np.asarray(xs, dtype=np.float64).reshape(-1, self.dim)
        return -(xs - self.mean) / self.std**2

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim, "mean": self.mean, "std": self.std, "kT": self.kT}


@dataclass
class QuarticToy(PotentialSystem):
    """Toy density ``p(x) = exp(-5|x|^2 + |x|^4)`` restricted to the box ``[-b, b]^d``.

    The density is not normalisable on the whole space, so it only exists
    inside the box; ``energy = 5|x|^2 - |x|^4`` at kT = 1.
    """

    d: int = 1
    box_half_width: float = 2.0
    kT: float = 1.0
    kind = "QuarticToy"

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigError("QuarticToy supports d in {1, 2}")
        if self.box_half_width <= 0:
            raise ConfigError("box_half_width must be positive")
        if self.kT <= 0:
            raise ConfigError("kT must be positive")
        self.dim = self.d
        self.spatial_dim = self.d
        self.n_particles = 1

    def in_domain(self, x):
        return bool((np.abs(np.asarray(x)) <= self.box_half_width).all())

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if not self.in_domain(x):
            raise DomainError(f"point {x} lies outside the box of half-width {self.box_half_width}")
        return x

    def energy(self, x):
        r2 = float(np.sum(self._check(x) ** 2))
        return 5.0 * r2 - r2 * r2

    def force(self, x):
        return quartic_score(self, x)

    def energy_and_force(self, x):
        x = self._check(x)
        r2 = float(x @ x) if x.ndim == 1 else float(np.sum(x * x))
        return 5.0 * r2 - r2 * r2, (4.0 * r2 - 10.0) * x

    def energies(self, xs):
        xs = np.asarray(xs, dtype=np.float64).reshape(-1, self.dim)
        if np.any(np.abs(xs) > self.box_half_width):
            raise DomainError("configuration outside the quartic box")
        r2 = np.sum(xs**2, axis=1)
        return 5.0 * r2 - r2 * r2

    def forces(self, xs):
        xs = np.asarray(xs, dtype=np.float64).reshape(-1, self.dim)
        if np.any(np.abs(xs) > self.box_half_width):
            raise DomainError("configuration outside the quartic box")
        r2 = np.sum(xs**2, axis=1, keepdims=True)
        return (4.0 * r2 - 10.0) * xs

    def to_dict(self):
        return {"kind": self.kind, "d": self.d, "box_half_width": self.box_half_width, "kT": self.kT}


def quartic_score(params, x):
    """Gradient of ``log p = -5|x|^2 + |x|^4``, i.e. ``(4|x|^2 - 10) x``."""
    x = params._check(x)
    return (4.0 * float(np.sum(x * x)) - 10.0) * x


@dataclass
class LennardJonesCluster(PotentialSystem):
    """Lennard-Jones cluster in 3D with an optional harmonic tether to the centre of mass.

    ``E = (1/2tau) sum_{i != j} ((r_m/d_ij)^12 - 2 (r_m/d_ij)^6) + 1/2 sum_i |x_i - x_mean|^2``
    """

    n_particles: int = 13
    r_m: float = 1.0
    tau: float = 1.0
    include_oscillator: bool = True
    kT: float = 1.0
    min_distance: float = 1e-10
    kind = "LennardJonesCluster"

    def __post_init__(self):
        if self.n_particles < 2:
            raise ConfigError("a Lennard-Jones cluster needs at least two particles")
        if self.r_m <= 0 or self.tau <= 0:
            raise ConfigError("r_m and tau must be positive")
        if self.kT <= 0:
            raise ConfigError("kT must be positive")
        self.dim = 3 * self.n_particles
        self.spatial_dim = 3

    def energy_and_force(self, x):
        x = np.asarray(x, dtype=np.float64)
        energy, forces, i, j, dist = kernels.lj_energy_forces(
            x, self.r_m, self.tau, self.include_oscillator, self.min_distance
        )
        if i >= 0:
            raise SingularityError(i, j, dist)
        return energy, forces.reshape(x.shape)

    def energy(self, x):
        return self.energy_and_force(x)[0]

    def force(self, x):
        return self.energy_and_force(x)[1]

    def to_dict(self):
        return {
            "kind": self.kind,
            "n_particles": self.n_particles,
            "r_m": self.r_m,
            "tau": self.tau,
            "include_oscillator": self.include_oscillator,
            "kT": self.kT,
        }


def lj_energy(params, x):
    return params.energy(x)


def lj_force(params, x):
    return params.force(x)


def system_from_dict(d):
    d = dict(d)
    kind = d.pop("kind", None)
    classes = {cls.kind: cls for cls in (GaussianWell, QuarticToy, LennardJonesCluster)}
    if kind not in classes:
        raise ConfigError(f"unknown potential kind {kind!r}; expected one of {sorted(classes)}")
    try:
        return classes[kind](**d)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {kind}: {exc}") from exc


def check_force_consistency(system, x, h=1e-5):
    """Largest ``|F_analytic + dE/dx_central| / (1 + |F_analytic|)`` over coordinates."""
    if not 1e-7 < h < 1e-3:
        raise ConfigError(f"finite-difference step must lie in (1e-7, 1e-3), got {h}")
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    analytic = np.asarray(system.force(x), dtype=np.float64).reshape(-1)
    worst = 0.0
    for k in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[k] += h
        xm[k] -= h
        grad = (system.energy(xp.reshape(x.shape)) - system.energy(xm.reshape(x.shape))) / (2 * h)
        worst = max(worst, abs(analytic[k] + grad) / (1.0 + abs(analytic[k])))
    return worst


def lattice_cluster(n_particles, spacing=1.1):
    """Compact cubic-lattice cluster of ``n_particles`` points, centred at the origin, shape (n, 3)."""
    m = int(np.ceil(n_particles ** (1 / 3))) + 2
    grid = np.stack(np.meshgrid(*[np.arange(-m, m + 1)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    order = np.lexsort((grid[:, 2], grid[:, 1], grid[:, 0], np.sum(grid**2, axis=1)))
    pts = grid[order[:n_particles]].astype(np.float64) * spacing
    return pts - pts.mean(axis=0)


def random_configuration(system, rng):
    """A random in-domain configuration suitable for consistency checks."""
    if isinstance(system, LennardJonesCluster):
        base = lattice_cluster(system.n_particles, spacing=1.1 * system.r_m)
        return (base + rng.normal(scale=0.08 * system.r_m, size=base.shape)).reshape(-1)
    if isinstance(system, QuarticToy):
        return rng.uniform(-system.box_half_width, system.box_half_width, size=system.dim)
    return system.mean + system.std * rng.normal(size=system.dim) * 2.0
