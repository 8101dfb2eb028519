"""Gaussian-smoothed mixtures and Monte Carlo divergence estimators.

Every smoothed law is represented as ``sum_i w_i N(a_i, t I)`` so that
densities and scores are exact. The population law on a manifold is proxied
by a fine quadrature net (``population_smoothed``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .errors import ResolutionTooCoarse
from .geometry import Circle, CliffordTorus, Manifold, Sphere, SurfaceDensity, sample_surface


@dataclass
class SmoothedMixture:
    atoms: np.ndarray
    weights: np.ndarray
    t: float

    def __post_init__(self):
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(self.atoms),):
            raise ValueError("weights must have one entry per atom")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        if not self.t > 0:
            raise ValueError("variance t must be positive")
        self.weights = w
        with np.errstate(divide="ignore"):
            self.logw = np.log(w)

    @classmethod
    def empirical(cls, atoms, t):
        atoms = np.atleast_2d(atoms)
        return cls(atoms, np.full(len(atoms), 1.0 / len(atoms)), t)

    @property
    def dim(self):
        return self.atoms.shape[1]

    def with_t(self, t):
        return SmoothedMixture(self.atoms, self.weights, t)

    def log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        lp, _ = kernels.mixture_logpdf_score(x, self.atoms, self.logw, self.t, want_score=False)
        return lp[0] if x.ndim == 1 else lp

    def density(self, x):
        return np.exp(self.log_density(x))

    def score(self, x):
        x = np.asarray(x, dtype=np.float64)
        _, s = kernels.mixture_logpdf_score(x, self.atoms, self.logw, self.t)
        return s[0] if x.ndim == 1 else s

    def log_density_and_score(self, x):
        return kernels.mixture_logpdf_score(x, self.atoms, self.logw, self.t)

    def sample(self, rng, n):
        idx = rng.choice(len(self.atoms), size=n, p=self.weights)
        return self.atoms[idx] + math.sqrt(self.t) * rng.standard_normal((n, self.dim))


@dataclass
class DivergenceEstimate:
    value: float
    std_error: float
    n_mc: int

    def as_dict(self):
        return {"value": self.value, "std_error": self.std_error, "n_mc": self.n_mc}


def _estimate(terms):
    terms = np.asarray(terms)
    n = len(terms)
    se = float(terms.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return DivergenceEstimate(float(terms.mean()), se, n)


def joint_se(*estimates):
    return math.sqrt(sum(e.std_error**2 for e in estimates))


def mixture_log_density(mix: SmoothedMixture, x):
    return mix.log_density(x)


def mixture_density(mix: SmoothedMixture, x):
    return mix.density(x)


def mixture_score(mix: SmoothedMixture, x):
    return mix.score(x)


def kl_estimate(p: SmoothedMixture, q: SmoothedMixture, n_mc, rng, control_variate=True):
    """KL(p || q) from samples of p.

    With ``control_variate`` the summand is ``r - 1 - log r`` with ``r = q/p``.
    Its mean equals the plain ``-log r`` mean because ``E_p[r] = 1``, but it is
    nonnegative pointwise and its variance vanishes as q -> p, which is what
    makes KL values of order 1e-4 measurable.
    """
    x = p.sample(rng, n_mc)
    lr = q.log_density(x) - p.log_density(x)
    if control_variate:
        terms = np.expm1(lr) - lr
    else:
        terms = -lr
    return _estimate(terms)


def chi2_upper_estimate(p: SmoothedMixture, q: SmoothedMixture, n_mc, rng):
    """chi^2(p || q) = E_q[(p/q - 1)^2] from samples of q."""
    x = q.sample(rng, n_mc)
    lr = p.log_density(x) - q.log_density(x)
    return _estimate(np.expm1(lr) ** 2)


def hellinger_sq_estimate(p: SmoothedMixture, q: SmoothedMixture, n_mc, rng):
    """H^2 = 2 - 2 E_p[sqrt(q/p)], the unnormalised convention with range [0, 2]."""
    x = p.sample(rng, n_mc)
    lr = q.log_density(x) - p.log_density(x)
    return _estimate(2.0 - 2.0 * np.exp(0.5 * lr))


# -- population proxy -------------------------------------------------------

def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    rho = np.sqrt(1.0 - z**2)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def quadrature_net(m: Manifold, resolution: int):
    """Nodes with equal cell volume and the nominal node spacing."""
    if isinstance(m, Circle):
        nodes = m.from_angle(2.0 * math.pi * np.arange(resolution) / resolution)
        return nodes, m.volume / resolution
    if isinstance(m, Sphere) and m.k == 2:
        nodes = np.zeros((resolution, m.D))
        nodes[:, :3] = m.radius * _fibonacci_sphere(resolution)
        return nodes, math.sqrt(m.volume / resolution)
    if isinstance(m, CliffordTorus):
        n1 = max(1, int(round(math.sqrt(resolution * m.r1 / m.r2))))
        n2 = max(1, int(math.ceil(resolution / n1)))
        a, b = np.meshgrid(2 * math.pi * np.arange(n1) / n1, 2 * math.pi * np.arange(n2) / n2, indexing="ij")
        nodes = m.from_angles(a.ravel(), b.ravel())
        return nodes, max(2 * math.pi * m.r1 / n1, 2 * math.pi * m.r2 / n2)
    raise NotImplementedError(f"no quadrature net for {type(m).__name__}")


def population_smoothed(m: Manifold, density: SurfaceDensity | None, t, resolution) -> SmoothedMixture:
    """Fine-net stand-in for the smoothed population law ``mu_data * N(0, t I)``."""
    density = density or SurfaceDensity()
    nodes, spacing = quadrature_net(m, resolution)
    if spacing > math.sqrt(t) / 10.0:
        raise ResolutionTooCoarse(f"net spacing {spacing:.4g} exceeds sqrt(t)/10 = {math.sqrt(t) / 10:.4g}")
    if density.is_uniform:
        w = np.full(len(nodes), 1.0 / len(nodes))
    else:
        w = np.asarray(density.pdf(m, nodes), dtype=np.float64)
        w = w / w.sum()
    return SmoothedMixture(nodes, w, t)


def min_resolution(m: Manifold, t):
    """Smallest resolution accepted by ``population_smoothed`` at variance t."""
    h = math.sqrt(t) / 10.0
    if isinstance(m, Circle):
        return int(math.ceil(m.volume / h))
    if isinstance(m, Sphere):
        return int(math.ceil(m.volume / h**2))
    if isinstance(m, CliffordTorus):
        return int(math.ceil(2 * math.pi * m.r1 / h) * math.ceil(2 * math.pi * m.r2 / h))
    raise NotImplementedError(type(m).__name__)


# -- rate experiment --------------------------------------------------------

@dataclass
class RateResult:
    rows: list = field(default_factory=list)  # (N, seed, kl, se)
    medians: dict = field(default_factory=dict)
    slope: float = float("nan")
    slope_ci: tuple = (float("nan"), float("nan"))

    def summary(self):
        return {
            "slope": self.slope,
            "slope_ci95": list(self.slope_ci),
            "median_kl": {str(k): v for k, v in self.medians.items()},
        }

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("N,seed,kl,se\n")
            for n, s, kl, se in self.rows:
                fh.write(f"{n},{s},{kl:.10g},{se:.10g}\n")


def fit_loglog_slope(xs, ys):
    """Least-squares slope of log y on log x with a 95% interval."""
    fit = stats.linregress(np.log(xs), np.log(ys))
    half = 1.96 * fit.stderr
    return float(fit.slope), (float(fit.slope - half), float(fit.slope + half))


def smoothing_rate_experiment(m, density, t0, N_grid, seeds, n_mc, resolution=None, population=None):
    """Median over seeds of KL(population smoothed || empirical smoothed) per N."""
    density = density or SurfaceDensity()
    if population is None:
        population = population_smoothed(m, density, t0, resolution or 2 * min_resolution(m, t0))
    out = RateResult()
    for n in N_grid:
        kls = []
        for seed in seeds:
            rng = np.random.default_rng([int(seed), int(n)])
            emp = SmoothedMixture.empirical(sample_surface(m, density, rng, n), t0)
            est = kl_estimate(population, emp, n_mc, rng)
            out.rows.append((int(n), int(seed), est.value, est.std_error))
            kls.append(est.value)
        out.medians[int(n)] = float(np.median(kls))
    if len(N_grid) >= 2:
        out.slope, out.slope_ci = fit_loglog_slope(list(out.medians), list(out.medians.values()))
    return out
