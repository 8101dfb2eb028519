import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, special

from coarse_diffusion.diagnostics import (
    cmin_lower_bound,
    coverage_report,
    covering_radius,
    gaussian_ball_lower,
    gaussian_ball_prob,
    hausdorff,
    memorization_fraction,
    projection_error,
    tangential_drift,
)
from coarse_diffusion.errors import BallTooLarge, EmptyCloud, TrainTooSmall
from coarse_diffusion.geometry import Circle, SpecialOrthogonal, Sphere, SurfaceDensity, sample_surface
from coarse_diffusion.nn import OptimState, ScoreNet, train_dsm
from coarse_diffusion.sampler import VE, SamplerConfig, hybrid_sample
from coarse_diffusion.score import Learned, OracleMixture, ProjectionClass, make_perturbed


def test_hausdorff_examples():
    a = np.random.default_rng(0).standard_normal((20, 3))
    assert hausdorff(a, a) == 0.0
    assert hausdorff(np.array([[0.0]]), np.array([[1.0]])) == 1.0
    with pytest.raises(EmptyCloud):
        hausdorff(np.zeros((0, 2)), a[:, :2])


def test_hausdorff_circle_net():
    c = Circle(1.0)
    n = 64
    net = c.from_angle(2 * math.pi * np.arange(n) / n)
    dense = c.from_angle(np.linspace(0, 2 * math.pi, 50_000, endpoint=False))
    s = 2 * math.sin(math.pi / n)  # chord spacing
    assert hausdorff(net, dense) <= s / 2 + 1e-6


cloud = arrays(np.float64, st.tuples(st.integers(1, 8), st.just(2)),
               elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=50, deadline=None)
@given(cloud, cloud)
def test_hausdorff_symmetric(a, b):
    assert hausdorff(a, b) == hausdorff(b, a)


def test_projection_error_exact_and_perturbed(rng):
    c = Sphere(2, 1.0)
    f = ProjectionClass.exact(c)
    assert projection_error(f, c, 0.05, 2000, rng).max <= 1e-9
    for kind in ("constant-direction", "tangential", "random-smooth", "normal"):
        p = make_perturbed(f, 0.02, kind, rng, c)
        assert projection_error(p, c, 0.05, 2000, rng).max <= 0.02 + 1e-9


@pytest.mark.slow
def test_projection_error_trained_beats_untrained():
    c = Circle(1.0)
    t = 0.25 / 10
    before, after = [], []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        data = sample_surface(c, SurfaceDensity(), rng, 200)
        net = ScoreNet(2, 64, 2, schedule=VE, rng=rng)
        before.append(projection_error(Learned(net, VE), c, t, 2000, np.random.default_rng(9)).max)
        train_dsm(net, data, 800, 128, OptimState(lr=2e-3, warmup=100), rng)
        e = projection_error(Learned(net, VE), c, t, 2000, np.random.default_rng(9)).max
        assert math.isfinite(e)
        after.append(e)
    assert np.median(after) < np.median(before)


def test_tangential_drift_cases(rng):
    c = Circle(1.0)
    x, _ = c.sample_tube(rng, 200, 0.25)
    cfg = SamplerConfig(t0=0.25, tau=1e-3, n_ode_steps=128)
    exact = ProjectionClass.exact(c)
    assert np.max(tangential_drift(c, exact, cfg, x)) <= 1e-12
    normal = make_perturbed(exact, 0.01, "normal", rng, c)
    assert np.max(tangential_drift(c, normal, cfg, x)) <= 1e-10
    tang = make_perturbed(exact, 0.01, "tangential", rng, c)
    d = tangential_drift(c, tang, cfg, x)
    assert 0 < np.max(d) <= 3 * math.sqrt(0.01)


def test_gaussian_factor_example():
    lb = gaussian_ball_lower(1, 1.0, 1.0)
    assert lb == pytest.approx(2 * (2 * math.pi) ** -0.5 * math.exp(-0.5))
    assert lb == pytest.approx(0.4839, abs=1e-4)
    exact = gaussian_ball_prob(1, 1.0, 1.0)
    assert exact == pytest.approx(math.erf(1 / math.sqrt(2)))
    assert lb <= exact


@pytest.mark.parametrize("m", [1, 2, 3, 7])
@pytest.mark.parametrize("r", [0.1, 0.5, 1.0, 2.0])
def test_gaussian_lower_below_exact(m, r):
    assert gaussian_ball_lower(m, 0.5, r) <= gaussian_ball_prob(m, 0.5, r)
    # the chi distribution integral is an independent oracle for the exact value
    f = lambda u: u ** (m - 1) * math.exp(-u * u / 2)
    norm = 2 ** (m / 2 - 1) * special.gamma(m / 2)
    assert gaussian_ball_prob(m, 0.5, r) == pytest.approx(integrate.quad(f, 0, r / math.sqrt(0.5))[0] / norm,
                                                         rel=1e-8)


def test_cmin_plugin_and_monotone():
    g = gaussian_ball_lower(1, 0.25, 0.05) * gaussian_ball_lower(1, 0.25, 0.25)
    assert cmin_lower_bound(1.0, 1.0, 1, 2, 0.25, 0.5, 2.0, 2.0, 0.05) == pytest.approx(g / 6)
    vals = [cmin_lower_bound(p, 1.0, 1, 2, 0.25, 0.5, 1.9, 2.0, 0.05) for p in (0.1, 0.3, 0.6, 1.0)]
    assert np.all(np.diff(vals) > 0)
    with pytest.raises(ValueError):
        cmin_lower_bound(1.0, 1.0, 0, 2, 0.25, 0.5, 2.0, 2.0, 0.05)


def test_coverage_dense_cloud(rng):
    c = Circle(1.0)
    x = sample_surface(c, SurfaceDensity(), rng, 200_000)
    rep = coverage_report(x, c, SurfaceDensity(), 0.2, 0.01, 40)
    assert rep.c_hat == pytest.approx(1.0, abs=0.05)
    assert np.all((rep.mass_mu >= 0) & (rep.mass_mu <= 1))


def test_coverage_empirical_hole_and_hybrid_fills(rng):
    c = Circle(1.0)
    train = sample_surface(c, SurfaceDensity(), rng, 200)
    delta = 0.25 * covering_radius(train, c)
    n_centers = int(math.ceil(2 * math.pi / (delta / 2)))
    alpha = 0.05
    emp = coverage_report(train, c, SurfaceDensity(), delta, alpha, n_centers)
    assert emp.c_hat == 0.0
    cfg = SamplerConfig(T=4.0, t0=0.25, tau=0.0025, n_sde_steps=100, n_ode_steps=64)
    gen = hybrid_sample(OracleMixture(train), 20_000, cfg, rng)
    assert coverage_report(gen, c, SurfaceDensity(), delta, alpha, n_centers).c_hat > 0


def test_coverage_reproducible_and_guarded():
    c = Circle(1.0)
    x = sample_surface(c, SurfaceDensity("vonmises", kappa=1.0), np.random.default_rng(0), 5000)
    a = coverage_report(x, c, SurfaceDensity("vonmises", kappa=1.0), 0.3, 0.01, 30)
    b = coverage_report(x, c, SurfaceDensity("vonmises", kappa=1.0), 0.3, 0.01, 30)
    assert a.c_hat == b.c_hat and a.c_hat >= 0
    with pytest.raises(BallTooLarge):
        coverage_report(x, c, None, 2.0, 0.01, 10)


def test_covering_radius_circle():
    c = Circle(1.0)
    n = 10
    pts = c.from_angle(2 * math.pi * np.arange(n) / n)
    assert covering_radius(pts, c) == pytest.approx(math.pi / n)


def test_memorization_copies(rng):
    train = rng.standard_normal((30, 4))
    rep = memorization_fraction(train[:10], train)
    assert rep.fraction_memorized == 1.0 and np.all(rep.ratios == 0)


def test_memorization_antipodal_arcs():
    c = Circle(1.0)
    gen = c.from_angle(np.linspace(0, 2 * math.pi, 100_000, endpoint=False))
    rep = memorization_fraction(gen, np.array([[1.0, 0.0], [-1.0, 0.0]]))

    def memorised(th):
        d1 = min(2 - 2 * math.cos(th), 2 + 2 * math.cos(th))
        d2 = max(2 - 2 * math.cos(th), 2 + 2 * math.cos(th))
        return float(d1 < 0.5 * d2)

    oracle = integrate.quad(memorised, 0, 2 * math.pi, points=[math.acos(1 / 3), math.acos(-1 / 3),
                                                               2 * math.pi - math.acos(-1 / 3),
                                                               2 * math.pi - math.acos(1 / 3)], limit=200)[0]
    assert rep.fraction_memorized == pytest.approx(oracle / (2 * math.pi), abs=0.02)


def test_memorization_duplicates_and_small_train():
    train = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    rep = memorization_fraction(np.array([[0.1, 0.0]]), train)
    assert rep.ratios[0] == pytest.approx(0.01 / 0.81)
    with pytest.raises(TrainTooSmall):
        memorization_fraction(np.zeros((1, 2)), np.zeros((3, 2)))
    assert memorization_fraction(np.zeros((0, 2)), train).fraction_memorized == 0.0


@pytest.mark.parametrize("m", [Circle(1.0), Sphere(2, 1.0), SpecialOrthogonal(3)], ids=["circle", "sphere", "so3"])
def test_memorization_floor_for_exact_samples(m):
    # locally Poisson: (d1/d2)^k is uniform, so P(d1^2/d2^2 < 1/2) = 2^(-k/2)
    rng = np.random.default_rng(0)
    train = m.sample_uniform(rng, 250).reshape(250, -1)
    gen = m.sample_uniform(rng, 20_000).reshape(20_000, -1)
    assert memorization_fraction(gen, train).fraction_memorized == pytest.approx(0.5 ** (m.k / 2), abs=0.03)
