"""Independent ground truth for score targets: closed forms, Monte Carlo and quadrature.

Quadrature uses composite Simpson sums accumulated in extended precision and
is checked by halving the grid: if the two estimates differ by more than the
tolerance the grid is refined, and a :class:`NumericalError` is raised when
refinement runs out.
"""
import json
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericalError

RICHARDSON_TOL = 1e-5
MAX_GRID = 2**20 + 1


@dataclass(frozen=True)
class Gaussian1D:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not self.std > 0:
            raise ConfigError("Gaussian1D std must be positive")

    def log_density(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.std
        return -0.5 * z * z - math.log(self.std * math.sqrt(2 * math.pi))

    def score(self, x):
        return -(np.asarray(x, dtype=np.float64) - self.mean) / self.std**2

    def support(self, width=12.0):
        return self.mean - width * self.std, self.mean + width * self.std


def gaussian_posterior(g, alpha, sigma_t):
    """Posterior of ``x0`` given ``x_t = alpha x0 + sigma_t eps``.

    Returns ``(coeff, offset, variance)`` with posterior mean ``coeff * x_t + offset``.
    """
    if not sigma_t > 0:
        raise ConfigError("sigma_t must be positive")
    s2 = g.std**2
    d = alpha * alpha * s2 + sigma_t * sigma_t
    return alpha * s2 / d, g.mean * sigma_t * sigma_t / d, sigma_t * sigma_t * s2 / d


def gaussian_marginal_score(g, alpha, sigma_t, x_t):
    """Score of ``N(alpha mean, alpha^2 std^2 + sigma_t^2)``."""
    return -(np.asarray(x_t, dtype=np.float64) - alpha * g.mean) / (alpha * alpha * g.std**2 + sigma_t * sigma_t)


@dataclass
class MonteCarloCheck:
    mc_estimate: float
    analytic: float
    abs_error: float
    force_std: float
    n_draws: int


def psm_label_mc_check(g, schedule, t, x_t, n_draws=100_000, rng=None):
    """Average the scaled force ``F(x0) / (alpha_t kT)`` over posterior draws and compare with the marginal score.

    ``g`` is the Boltzmann density itself, so ``F / kT`` is its score.
    """
    if n_draws < 10_000:
        raise ConfigError("the Monte Carlo check needs at least 10^4 draws")
    rng = np.random.default_rng(0) if rng is None else rng
    alpha, sigma = schedule.coeffs(t)
    coeff, offset, var = gaussian_posterior(g, alpha, sigma)
    x0 = coeff * x_t + offset + math.sqrt(var) * rng.standard_normal(n_draws)
    labels = g.score(x0) / alpha
    mc = float(np.mean(labels))
    exact = float(gaussian_marginal_score(g, alpha, sigma, x_t))
    return MonteCarloCheck(mc, exact, abs(mc - exact), float(np.std(labels)), n_draws)


def target_variance(g, alpha, sigma_t, dim=1):
    """Conditional variances (given ``x_t``) of the DSM and PSM score-scale targets, summed over ``dim``."""
    s2 = g.std**2
    d = alpha * alpha * s2 + sigma_t * sigma_t
    dsm = dim * alpha * alpha * s2 / (sigma_t * sigma_t) / d
    psm = dim * sigma_t * sigma_t / (alpha * alpha * s2) / d
    return dsm, psm


def target_variance_mc(g, alpha, sigma_t, n_draws=1_000_000, dim=1, rng=None):
    """Empirical per-dimension variances of both targets around the marginal score.

    Draws ``(x0, eps)`` jointly, so the check does not rely on the posterior
    formulas: the conditional mean of either target is the marginal score, and
    the spread around it is the expected conditional variance.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    x0 = g.mean + g.std * rng.standard_normal((n_draws, dim))
    eps = rng.standard_normal((n_draws, dim))
    x_t = alpha * x0 + sigma_t * eps
    centre = gaussian_marginal_score(g, alpha, sigma_t, x_t)
    dsm = -eps / sigma_t - centre
    psm = g.score(x0) / alpha - centre
    return float(np.mean(dsm * dsm)), float(np.mean(psm * psm))


def simpson_weights(n, h):
    if n < 3 or n % 2 == 0:
        raise ConfigError("Simpson's rule needs an odd number of at least 3 grid points")
    w = np.full(n, 2.0)
    w[1:-1:2] = 4.0
    w[0] = w[-1] = 1.0
    return w * (h / 3.0)


def _esum(a):
    return float(np.sum(np.asarray(a, dtype=np.longdouble)))


def _posterior_stats_1d(log_prior, funcs, alpha, sigma, x_t, lo, hi, n):
    """Posterior expectations of each ``f in funcs`` on an ``n``-point grid over ``[lo, hi]``."""
    x = np.linspace(lo, hi, n)
    logw = log_prior(x) - 0.5 * ((x_t - alpha * x) / sigma) ** 2
    w = np.exp(logw - np.max(logw)) * simpson_weights(n, (hi - lo) / (n - 1))
    z = _esum(w)
    if not _resolved(w, z):
        return [math.nan] * len(funcs)
    return [_esum(w * f(x)) / z for f in funcs]


def _resolved(w, z, min_points=16.0):
    """Grids that put the posterior on only a handful of points agree with each other spuriously."""
    return z * z / _esum(w * w) >= min_points


def _converged(compute, n, tol, what, max_n=MAX_GRID):
    """Evaluate ``compute(n)`` on successively finer grids until halving the step changes nothing."""
    coarse = np.asarray(compute(n))
    while True:
        fine_n = 2 * n - 1
        fine = np.asarray(compute(fine_n))
        change = np.max(np.abs(fine - coarse))
        if change <= tol:
            return fine, fine_n
        if fine_n > max_n:
            raise NumericalError(f"{what}: quadrature did not converge by {fine_n} grid points (last change {change:.3g})")
        n, coarse = fine_n, fine


def _box(system):
    if hasattr(system, "box_half_width"):
        b = system.box_half_width
        return -b, b
    if hasattr(system, "std"):
        return system.mean - 12.0 * system.std, system.mean + 12.0 * system.std
    raise DataError(f"no integration box known for {type(system).__name__}")


def marginal_score_quadrature(system, schedule, t, x_t, grid=4097, tol=RICHARDSON_TOL):
    """Score of the noised density ``p_t = int p(x0) N(x_t; alpha x0, sigma^2) dx0`` by quadrature.

    Uses ``(alpha E[x0 | x_t] - x_t) / sigma^2``, which holds for a density
    truncated to a box as well. ``system`` is a 1D or 2D analytic system with
    a vectorised ``energies``.
    """
    if grid < 2049:
        raise ConfigError("use at least 2049 grid points in 1D")
    alpha, sigma = schedule.coeffs(t)
    x_t = np.atleast_1d(np.asarray(x_t, dtype=np.float64))
    lo, hi = _box(system)
    kT = system.kT
    if system.dim == 1:
        def log_prior(x):
            return -system.energies(x.reshape(-1, 1)) / kT

        def compute(n):
            (m,) = _posterior_stats_1d(log_prior, [lambda x: x], alpha, sigma, x_t[0], lo, hi, n)
            return (alpha * m - x_t[0]) / sigma**2

        value, _ = _converged(compute, grid, tol, "marginal score")
        return np.array([float(value)])
    if system.dim == 2:
        def compute(n):
            ax = np.linspace(lo, hi, n)
            w1 = simpson_weights(n, (hi - lo) / (n - 1))
            gx, gy = np.meshgrid(ax, ax, indexing="ij")
            pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
            logw = -system.energies(pts) / kT - 0.5 * np.sum((x_t - alpha * pts) ** 2, axis=1) / sigma**2
            w = np.exp(logw - logw.max()) * np.outer(w1, w1).ravel()
            z = _esum(w)
            if not _resolved(w, z):
                return np.full(2, math.nan)
            m = np.array([_esum(w * pts[:, 0]), _esum(w * pts[:, 1])]) / z
            return (alpha * m - x_t) / sigma**2

        value, _ = _converged(compute, 1025, tol, "marginal score", max_n=4097)
        return value
    raise DataError("quadrature oracle supports 1D and 2D systems only")


@dataclass
class Theorem2Result:
    norm_i1_sq: float
    norm_i2_sq: float
    i3: float
    grid: int

    @property
    def holds(self):
        return self.norm_i1_sq <= self.norm_i2_sq


def theorem2_check(p, q, t, schedule, x_t, box=None, grid=16385, tol=RICHARDSON_TOL):
    """Quadrature for the score errors of force-based and noise-based targets on biased data.

    ``p`` is the Boltzmann density and ``q`` the data density; both expose
    vectorised ``log_density`` and ``score``. Returns ``|I1|^2`` (force target
    averaged under the data posterior, compared with the exact score) and
    ``|I2|^2`` (data score compared with the exact score), with ``I3 = I2 - I1``.
    """
    alpha, sigma = schedule.coeffs(t)
    if box is None:
        lp, hp = p.support()
        lq, hq = q.support()
        box = (min(lp, lq), max(hp, hq))
    lo, hi = box

    def compute(n):
        ep_score, = _posterior_stats_1d(p.log_density, [p.score], alpha, sigma, x_t, lo, hi, n)
        eq_pscore, eq_qscore = _posterior_stats_1d(q.log_density, [p.score, q.score], alpha, sigma, x_t, lo, hi, n)
        return np.array([eq_pscore - ep_score, eq_qscore - ep_score])

    (i1, i2), n = _converged(compute, grid, tol, "score-gap norms")
    return Theorem2Result(float(i1 * i1), float(i2 * i2), float(i2 - i1), n)


@dataclass
class DiscreteCheck:
    x_t_values: np.ndarray
    posterior_means: np.ndarray
    brute_force: np.ndarray
    candidates: np.ndarray


def discrete_denoiser_check(atoms, masses, noise_values, noise_probs, sigma, candidates):
    """Brute-force the least-squares denoiser on a fully discrete toy.

    Clean points take values ``atoms`` with probabilities ``masses``; the noise
    takes ``noise_values`` with ``noise_probs``. Over all tables that assign a
    value from ``candidates`` to every reachable ``x_t``, the loss
    ``E |D(x_t) - x0|^2`` is minimised; the minimiser is compared with the
    exact posterior mean per cell. The loss is a sum over cells, so searching
    each cell over the candidates is an exhaustive search over tables.
    """
    atoms = np.asarray(atoms, dtype=np.float64)
    masses = np.asarray(masses, dtype=np.float64)
    noise_values = np.asarray(noise_values, dtype=np.float64)
    noise_probs = np.asarray(noise_probs, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    if not (np.isclose(masses.sum(), 1.0) and np.isclose(noise_probs.sum(), 1.0)):
        raise DataError("masses and noise probabilities must each sum to 1")
    x_t = np.round(atoms[:, None] + sigma * noise_values[None, :], 12)
    joint = masses[:, None] * noise_probs[None, :]
    cells = np.unique(x_t)
    means = np.empty(len(cells))
    best = np.empty(len(cells))
    for k, c in enumerate(cells):
        sel = x_t == c
        w = joint[sel]
        x0 = np.broadcast_to(atoms[:, None], x_t.shape)[sel]
        means[k] = np.sum(w * x0) / np.sum(w)
        losses = [np.sum(w * (v - x0) ** 2) for v in candidates]
        best[k] = candidates[int(np.argmin(losses))]
    return DiscreteCheck(cells, means, best, candidates)


def timed(name, fn, *args, **kwargs):
    """Run a check and return ``(name, passed, detail, seconds)``; ``fn`` returns ``(passed, detail)``."""
    start = time.perf_counter()
    try:
        passed, detail = fn(*args, **kwargs)
    except Exception as exc:  # a crashing check is reported as a failed one
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return {"check": name, "passed": bool(passed), "detail": detail, "seconds": round(time.perf_counter() - start, 4)}


def write_report(path, results, meta=None):
    doc = {"checks": results, "all_passed": all(r["passed"] for r in results), "meta": meta or {}}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return doc
