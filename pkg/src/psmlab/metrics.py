"""Evaluation metrics for generated ensembles.

Histograms carry masses that sum to one together with an ``overflow`` mass
for values that fall outside the binned range; the total variation distance
treats the overflow as one extra bin.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from . import kernels
from .errors import ConfigError, DataError, NumericalError, SingularityError, DomainError


@dataclass
class SampleSet:
    configurations: np.ndarray
    n_particles: int = 1
    spatial_dim: int = 1
    energies: np.ndarray = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        conf = np.asarray(self.configurations, dtype=np.float64)
        if conf.ndim != 2:
            conf = conf.reshape(len(conf) if conf.ndim > 2 else -1, self.n_particles * self.spatial_dim)
        if conf.shape[1] != self.n_particles * self.spatial_dim:
            raise DataError(
                f"configurations of dimension {conf.shape[1]} do not match "
                f"{self.n_particles} particles x {self.spatial_dim} dims"
            )
        self.configurations = conf

    def __len__(self):
        return len(self.configurations)

    @property
    def dim(self):
        return self.configurations.shape[1]

    def frames(self):
        return self.configurations.reshape(len(self), self.n_particles, self.spatial_dim)


@dataclass
class Histogram:
    bin_edges: np.ndarray
    masses: np.ndarray
    overflow: float = 0.0

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=np.float64)
        self.masses = np.asarray(self.masses, dtype=np.float64)
        if self.masses.shape != (len(self.bin_edges) - 1,):
            raise DataError("a histogram needs exactly one mass per bin")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise DataError("bin edges must be strictly increasing")
        if np.any(self.masses < 0) or self.overflow < 0:
            raise DataError("histogram masses must be non-negative")

    @property
    def widths(self):
        return np.diff(self.bin_edges)

    @property
    def densities(self):
        return self.masses / self.widths

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "density"])
            for lo, hi, d in zip(self.bin_edges[:-1], self.bin_edges[1:], self.densities):
                w.writerow([repr(float(lo)), repr(float(hi)), repr(float(d))])


def histogram_from_values(values, bin_edges, weights_total=None):
    """Normalised histogram of ``values``; out-of-range values go to ``overflow``."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    edges = np.asarray(bin_edges, dtype=np.float64)
    total = len(values) if weights_total is None else weights_total
    if total == 0:
        raise DataError("cannot build a histogram from no values")
    counts, _ = np.histogram(values, bins=edges)
    inside = counts.sum()
    return Histogram(edges, counts / total, overflow=(len(values) - inside) / total)


def _require_same_edges(p, q):
    if p.bin_edges.shape != q.bin_edges.shape or not np.array_equal(p.bin_edges, q.bin_edges):
        raise DataError("histograms have different bin edges")


def interatomic_hist(samples, bin_edges):
    """Distribution h(r) of all ordered inter-particle distances, pooled over samples."""
    if samples.n_particles < 2:
        raise DataError("interatomic distances need at least two particles")
    if len(samples) == 0:
        raise DataError("empty sample set")
    dists = kernels.pair_distances(samples.frames())
    # each unordered pair appears twice among the N(N-1) ordered pairs, which cancels in the normalisation
    return histogram_from_values(dists, bin_edges)


def default_distance_edges(reference, n_bins=100):
    """100 uniform bins over [0, 1.2 * largest reference distance]."""
    dmax = float(kernels.pair_distances(reference.frames()).max())
    return np.linspace(0.0, 1.2 * dmax, n_bins + 1)


def coordinate_hist(samples, bin_edges, axis=None):
    """Histogram of raw coordinates (all of them, or one axis) for low-dimensional toys."""
    conf = samples.configurations
    values = conf if axis is None else conf[:, axis]
    return histogram_from_values(values, bin_edges)


def tvd(p, q):
    """Total variation distance ``1/2 sum |p_i - q_i|`` (overflow counts as a bin)."""
    _require_same_edges(p, q)
    return 0.5 * (float(np.sum(np.abs(p.masses - q.masses))) + abs(p.overflow - q.overflow))


def mae_hist(p, q):
    """Mean over bins of the absolute difference of densities (mass / bin width)."""
    _require_same_edges(p, q)
    return float(np.mean(np.abs(p.densities - q.densities)))


def _as_points(a):
    if isinstance(a, SampleSet):
        return a.configurations
    arr = np.asarray(a, dtype=np.float64)
    return arr.reshape(len(arr), -1)


def wasserstein2(a, b, exact_limit=512, entropic_eps=None):
    """Empirical 2-Wasserstein distance between two equally weighted point clouds.

    One-dimensional data use the exact sorted (quantile) coupling. Otherwise
    sets of up to ``exact_limit`` points are matched exactly by solving the
    assignment problem; larger sets fall back to log-domain Sinkhorn with
    regularisation ``0.01 * median cost`` (returned value is the transport
    cost of the entropic plan).
    """
    x = _as_points(a)
    y = _as_points(b)
    if x.shape[1] != y.shape[1]:
        raise DataError("point clouds have different dimensions")
    if x.shape[1] == 1:
        if len(x) != len(y):
            raise DataError("1D quantile coupling needs equal sample sizes")
        return math.sqrt(float(np.mean((np.sort(x[:, 0]) - np.sort(y[:, 0])) ** 2)))
    cost = _sq_dists(x, y)
    if len(x) <= exact_limit and len(y) <= exact_limit:
        if len(x) != len(y):
            raise DataError("exact assignment needs equal sample sizes")
        rows, cols = linear_sum_assignment(cost)
        return math.sqrt(float(cost[rows, cols].mean()))
    return math.sqrt(sinkhorn_cost(cost, entropic_eps))


def wasserstein2_1d(a, b):
    """Exact W-2 between 1D samples of equal size via sorting."""
    a = np.sort(np.asarray(a, dtype=np.float64).reshape(-1))
    b = np.sort(np.asarray(b, dtype=np.float64).reshape(-1))
    if a.shape != b.shape:
        raise DataError("1D quantile coupling needs equal sample sizes")
    return math.sqrt(float(np.mean((a - b) ** 2)))


def _sq_dists(x, y):
    if x.shape[0] * y.shape[0] * x.shape[1] <= 2**24:
        # explicit differences keep identical points at exactly zero cost
        return np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=2)
    d = np.sum(x * x, axis=1)[:, None] + np.sum(y * y, axis=1)[None, :] - 2.0 * x @ y.T
    return np.maximum(d, 0.0)


def sinkhorn_cost(cost, eps=None, n_iter=2000, tol=1e-9):
    """Transport cost of the entropic plan between uniform marginals (log-domain Sinkhorn)."""
    n, m = cost.shape
    if eps is None:
        eps = 0.01 * float(np.median(cost))
    if eps <= 0:
        raise ConfigError("entropic regularisation must be positive")
    log_a = np.full(n, -math.log(n))
    log_b = np.full(m, -math.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    k = -cost / eps
    for _ in range(n_iter):
        f_new = eps * (log_a - logsumexp(k + g[None, :] / eps, axis=1))
        g = eps * (log_b - logsumexp(k + f_new[:, None] / eps, axis=0))
        if np.max(np.abs(f_new - f)) < tol * max(1.0, eps):
            f = f_new
            break
        f = f_new
    plan = np.exp(k + f[:, None] / eps + g[None, :] / eps)
    value = float(np.sum(plan * cost))
    if not np.isfinite(value):
        raise NumericalError("Sinkhorn iterations produced a non-finite transport cost")
    return value


@dataclass
class StabilityResult:
    stable: bool
    pair: tuple = None
    deviation: float = 0.0


def stability_check(sample, reference_bonds, threshold=0.5, spatial_dim=3):
    """Unstable when some bonded pair's length deviates from its reference by more than ``threshold``."""
    if len(reference_bonds) == 0:
        raise DataError("stability check needs at least one reference bond")
    pos = np.asarray(sample, dtype=np.float64).reshape(-1, spatial_dim)
    worst = (None, 0.0)
    for i, j, b in reference_bonds:
        if not (0 <= i < len(pos) and 0 <= j < len(pos)):
            raise DomainError(f"bond ({i}, {j}) refers to a particle outside 0..{len(pos) - 1}")
        dev = abs(float(np.linalg.norm(pos[i] - pos[j])) - b)
        if dev > worst[1] or worst[0] is None:
            worst = ((int(i), int(j)), dev)
    if worst[1] > threshold:
        return StabilityResult(False, worst[0], worst[1])
    return StabilityResult(True, None, worst[1])


def bonds_from_frame(frame, cutoff=1.8, spatial_dim=3):
    """Reference bond list: every pair closer than ``cutoff`` in an equilibrium frame."""
    pos = np.asarray(frame, dtype=np.float64).reshape(-1, spatial_dim)
    bonds = []
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            d = float(np.linalg.norm(pos[i] - pos[j]))
            if d < cutoff:
                bonds.append((i, j, d))
    return bonds


def stable_fraction(samples, reference_bonds, threshold=0.5):
    results = [stability_check(x, reference_bonds, threshold, samples.spatial_dim) for x in samples.configurations]
    return sum(r.stable for r in results) / len(results)


def sample_energies(samples, system):
    """Per-sample energies; configurations where the system is undefined are skipped and counted."""
    if len(samples) == 0:
        raise DataError("empty sample set")
    try:
        # batch path; any invalid configuration falls through to the per-sample loop
        return np.asarray(system.energies(samples.configurations), dtype=np.float64), 0
    except (SingularityError, DomainError):
        pass
    energies = []
    skipped = 0
    for x in samples.configurations:
        try:
            if not system.in_domain(x):
                skipped += 1
                continue
            energies.append(system.energy(x))
        except (SingularityError, DomainError):
            skipped += 1
    return np.array(energies), skipped


def energy_hist(samples, system, bin_edges):
    """Histogram of per-sample energies; returns ``(histogram, n_skipped)``."""
    energies, skipped = sample_energies(samples, system)
    if len(energies) == 0:
        raise DataError("no sample has a finite energy")
    return histogram_from_values(energies, bin_edges), skipped
