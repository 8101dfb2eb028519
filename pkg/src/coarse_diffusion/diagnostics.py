"""Metrics: Hausdorff distance, projection error, tangential drift, coverage
by thickened geodesic balls with the analytic lower bound, memorisation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special

from . import kernels
from .errors import BallTooLarge, EmptyCloud, TrainTooSmall
from .geometry import Circle, CliffordTorus, Manifold, Sphere, SurfaceDensity, sample_surface
from .measures import _fibonacci_sphere
from .sampler import SamplerConfig, pf_ode_run
from .score import denoiser


def _cloud(a):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.size == 0 or len(a) == 0:
        raise EmptyCloud("point cloud is empty")
    return a


def directed_hausdorff(a, b):
    """sup over a of the distance to b."""
    a, b = _cloud(a), _cloud(b)
    d2, _ = kernels.nearest_sq(a, b)
    return float(np.sqrt(d2.max()))


def hausdorff(a, b):
    return max(directed_hausdorff(a, b), directed_hausdorff(b, a))


def max_dist_to_manifold(points, m: Manifold):
    return float(np.max(m.dist(_cloud(points))))


@dataclass
class ProjectionError:
    max: float
    quantiles: dict
    values: np.ndarray = field(repr=False, default=None)


def projection_error(field_, m: Manifold, t, n_probe, rng, tube_radius=None) -> ProjectionError:
    """sup over tube probes of ||denoiser(x, t) - proj(x)||."""
    radius = m.reach / 4 if tube_radius is None else tube_radius
    x, y = m.sample_tube(rng, n_probe, radius)
    err = np.linalg.norm(denoiser(field_, x, t) - y, axis=1)
    q = {str(p): float(np.quantile(err, p)) for p in (0.5, 0.9, 0.99)}
    return ProjectionError(float(err.max()), q, err)


def tangential_drift(m: Manifold, field_, config: SamplerConfig, x):
    """Geodesic distance between proj(x) and proj of the ODE endpoint from x."""
    x = np.atleast_2d(x)
    end = pf_ode_run(field_, x, config.t0, config.tau, config.n_ode_steps, config.ode_method, config.schedule)
    return np.asarray(m.geodesic_distance(m.project(x), m.project(end)))


# -- coverage ------------------------------------------------------------------

def gaussian_ball_lower(m, t0, r):
    """Explicit lower bound on P(||G_m|| <= r) for G_m ~ N(0, t0 I_m)."""
    omega = math.pi ** (m / 2) / math.gamma(m / 2 + 1)
    return (2 * math.pi * t0) ** (-m / 2) * math.exp(-(r**2) / (2 * t0)) * omega * r**m


def gaussian_ball_prob(m, t0, r):
    """Exact P(||G_m|| <= r) via the regularised incomplete gamma function."""
    return float(special.gammainc(m / 2, r**2 / (2 * t0)))


def cmin_lower_bound(p_min, p_max, k, D, t0, rho, c_vol, C_vol, a):
    """(p_min/p_max)(c_vol/C_vol)/(2^k 3^k) P(||G_k||<=a) P(||G_{D-k}||<=rho/2),
    with both Gaussian factors replaced by their explicit lower bounds."""
    if min(p_min, p_max, t0, rho, c_vol, C_vol, a) <= 0:
        raise ValueError("all arguments must be positive")
    if k < 1 or D <= k:
        raise ValueError("need 1 <= k < D")
    return ((p_min / p_max) * (c_vol / C_vol) / (2**k * 3**k)
            * gaussian_ball_lower(k, t0, a) * gaussian_ball_lower(D - k, t0, rho / 2))


def cmin_parameters(delta, rho, reach):
    """a = min(rho/2, kappa/(2 L_rho)) with kappa = delta/6 and L_rho = reach/(reach - rho)."""
    if not 0 < rho < reach:
        raise ValueError("need 0 < rho < reach")
    kappa = delta / 6.0
    L = reach / (reach - rho)
    return min(rho / 2.0, kappa / (2.0 * L))


def volume_constants(m: Manifold, delta, n_grid=64):
    """(c_vol, C_vol) as min/max of Vol(B_s)/s^k over s in (0, delta]."""
    s = np.linspace(delta / n_grid, delta, n_grid)
    r = np.array([m.ball_volume(v) / v**m.k for v in s])
    return float(r.min()), float(r.max())


def coverage_centers(m: Manifold, n_centers, rng=None):
    """Deterministic geodesic net (random Haar centres on SO(d))."""
    if isinstance(m, Circle):
        return m.from_angle(2 * math.pi * (np.arange(n_centers) + 0.5) / n_centers)
    if isinstance(m, Sphere) and m.k == 2:
        out = np.zeros((n_centers, m.D))
        out[:, :3] = m.radius * _fibonacci_sphere(n_centers)
        return out
    if isinstance(m, CliffordTorus):
        n1 = max(1, int(round(math.sqrt(n_centers))))
        n2 = max(1, int(math.ceil(n_centers / n1)))
        a, b = np.meshgrid(2 * math.pi * np.arange(n1) / n1, 2 * math.pi * np.arange(n2) / n2, indexing="ij")
        return m.from_angles(a.ravel(), b.ravel())
    rng = np.random.default_rng(0) if rng is None else rng
    return m.sample_uniform(rng, n_centers)


def _geodesic_matrix(m: Manifold, p, c):
    """Geodesic distances between on-manifold rows of p and c, shape (len(p), len(c))."""
    if isinstance(m, Circle):
        a = np.arctan2(p[:, 1], p[:, 0])[:, None] - np.arctan2(c[:, 1], c[:, 0])[None, :]
        return m.radius * np.abs(np.arctan2(np.sin(a), np.cos(a)))
    if isinstance(m, Sphere):
        cos = np.clip(p @ c.T / m.radius**2, -1.0, 1.0)
        return m.radius * np.arccos(cos)
    if isinstance(m, CliffordTorus):
        pa, ca = m.angles(p), m.angles(c)
        da = pa[:, None, 0] - ca[None, :, 0]
        db = pa[:, None, 1] - ca[None, :, 1]
        da = np.abs(np.arctan2(np.sin(da), np.cos(da))) * m.r1
        db = np.abs(np.arctan2(np.sin(db), np.cos(db))) * m.r2
        return np.hypot(da, db)
    out = np.empty((len(p), len(c)))
    for j, cj in enumerate(c):
        out[:, j] = m.geodesic_distance(p, np.broadcast_to(cj, p.shape))
    return out


def data_ball_mass(m: Manifold, density: SurfaceDensity, centers, delta, rng=None, n_mc=200_000):
    """mu_data(B_delta(y)) for each centre: analytic, quadrature or Monte Carlo."""
    if density.is_uniform:
        return np.full(len(centers), m.ball_volume(delta) / m.volume)
    if density.kind == "vonmises" and isinstance(m, Circle):
        th = np.arctan2(centers[:, 1], centers[:, 0])
        half = delta / m.radius
        norm = 2 * math.pi * special.i0(density.kappa)
        f = lambda a: math.exp(density.kappa * math.cos(a - density.mean_angle)) / norm
        return np.array([integrate.quad(f, c - half, c + half)[0] for c in th])
    rng = np.random.default_rng(0) if rng is None else rng
    ys = sample_surface(m, density, rng, n_mc)
    out = np.zeros(len(centers))
    for lo in range(0, n_mc, 20_000):
        out += (_geodesic_matrix(m, ys[lo:lo + 20_000], centers) <= delta).sum(axis=0)
    return out / n_mc


@dataclass
class CoverageReport:
    delta: float
    alpha: float
    centers: np.ndarray = field(repr=False)
    mass_mu: np.ndarray = field(repr=False)
    mass_data: np.ndarray = field(repr=False)
    c_hat: float = 0.0
    c_min_analytic: float | None = None
    n_samples: int = 0
    mass_floor: float = 1e-6

    @property
    def argmin_center(self):
        ok = self.mass_data >= self.mass_floor
        ratio = np.where(ok, self.mass_mu / np.maximum(self.mass_data, 1e-300), np.inf)
        return int(np.argmin(ratio))

    def to_dict(self):
        return {"delta": self.delta, "alpha": self.alpha, "c_hat": self.c_hat,
                "c_min_analytic": self.c_min_analytic, "n_samples": self.n_samples,
                "n_centers": int(len(self.centers)), "mass_floor": self.mass_floor,
                "n_empty_centers": int(np.sum(self.mass_mu == 0))}

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join([f"y{i}" for i in range(self.centers.shape[1])] + ["mass_mu", "mass_data"]) + "\n")
            for c, a, b in zip(self.centers, self.mass_mu, self.mass_data):
                fh.write(",".join(f"{v:.10g}" for v in (*c, a, b)) + "\n")


def coverage_report(samples, m: Manifold, density: SurfaceDensity | None, delta, alpha, n_centers, rng=None,
                    mass_floor=1e-6, c_min=None) -> CoverageReport:
    """Masses of alpha-thickened geodesic delta-balls around a net of centres."""
    density = density or SurfaceDensity()
    if delta > m.injectivity_radius / 2:
        raise BallTooLarge(f"delta={delta} exceeds half the injectivity radius")
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    centers = coverage_centers(m, n_centers, rng)
    n = len(x)
    counts = np.zeros(len(centers))
    if n:
        near = np.asarray(m.dist(x)) <= alpha
        if np.any(near):
            p = np.atleast_2d(m.project(x[near]))
            for lo in range(0, len(p), 20_000):
                counts += (_geodesic_matrix(m, p[lo:lo + 20_000], centers) <= delta).sum(axis=0)
    mass_mu = counts / max(n, 1)
    mass_data = data_ball_mass(m, density, centers, delta, rng)
    ok = mass_data >= mass_floor
    c_hat = float(np.min(mass_mu[ok] / mass_data[ok])) if np.any(ok) else float("nan")
    return CoverageReport(delta, alpha, centers, mass_mu, mass_data, c_hat, c_min, n, mass_floor)


def covering_radius(points, m: Manifold, n_probe=20_000, rng=None):
    """Largest geodesic distance from a point of m to the nearest sample.

    Exact for the Circle (half the largest angular gap); dense probing otherwise.
    """
    p = np.atleast_2d(points)
    if isinstance(m, Circle):
        ang = np.sort(np.mod(np.arctan2(p[:, 1], p[:, 0]), 2 * math.pi))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * math.pi]]))
        return float(m.radius * gaps.max() / 2)
    rng = np.random.default_rng(0) if rng is None else rng
    probes = m.sample_uniform(rng, n_probe)
    best = np.full(n_probe, np.inf)
    for lo in range(0, len(p), 256):
        best = np.minimum(best, _geodesic_matrix(m, probes, p[lo:lo + 256]).min(axis=1))
    return float(best.max())


# -- memorisation --------------------------------------------------------------------

@dataclass
class MemorizationReport:
    fraction_memorized: float
    ratios: np.ndarray = field(repr=False)
    threshold: float = 0.5

    def to_dict(self):
        return {"fraction_memorized": self.fraction_memorized, "threshold": self.threshold,
                "n": int(len(self.ratios)), "median_ratio": float(np.median(self.ratios)) if len(self.ratios) else None}


def memorization_fraction(generated, train, threshold=0.5) -> MemorizationReport:
    """Fraction of generated points with d1^2/d2^2 < threshold (nearest and
    second-nearest training points, after removing duplicate training rows)."""
    train = np.unique(np.atleast_2d(np.asarray(train, dtype=np.float64)), axis=0)
    if len(train) < 2:
        raise TrainTooSmall("need at least two distinct training points")
    g = np.atleast_2d(np.asarray(generated, dtype=np.float64))
    if len(g) == 0:
        return MemorizationReport(0.0, np.zeros(0), threshold)
    d1, d2, _ = kernels.two_nearest_sq(g, train)
    ratios = d1 / d2
    return MemorizationReport(float(np.mean(ratios < threshold)), ratios, threshold)
