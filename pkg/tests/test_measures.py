import math

import numpy as np
import pytest
from scipy import integrate, special

from coarse_diffusion import kernels
from coarse_diffusion.errors import ResolutionTooCoarse
from coarse_diffusion.geometry import Circle, SurfaceDensity, sample_surface
from coarse_diffusion.measures import (
    SmoothedMixture,
    chi2_upper_estimate,
    fit_loglog_slope,
    hellinger_sq_estimate,
    joint_se,
    kl_estimate,
    min_resolution,
    mixture_density,
    mixture_log_density,
    mixture_score,
    population_smoothed,
    smoothing_rate_experiment,
)
from coarse_diffusion.suites import divergence_corpus


def atom(a, t=1.0):
    return SmoothedMixture(np.atleast_2d(np.asarray(a, dtype=float)), np.ones(1), t)


def test_density_examples():
    assert mixture_density(atom([0.0]), np.array([0.0])) == pytest.approx((2 * math.pi) ** -0.5)
    two = SmoothedMixture(np.array([[-1.0], [1.0]]), np.array([0.5, 0.5]), 1.0)
    assert mixture_density(two, np.array([0.0])) == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi))
    assert mixture_density(two, np.array([0.0])) == pytest.approx(0.24197, abs=1e-5)


def test_density_integrates_to_one(rng):
    mix = SmoothedMixture(rng.standard_normal((5, 2)), rng.dirichlet(np.ones(5)), 0.3)
    g = np.linspace(-6, 6, 401)
    X, Y = np.meshgrid(g, g)
    vals = mixture_density(mix, np.stack([X.ravel(), Y.ravel()], axis=1)).reshape(X.shape)
    assert integrate.trapezoid(integrate.trapezoid(vals, g), g) == pytest.approx(1.0, abs=0.01)


def test_score_examples(rng):
    a = np.array([0.3, -1.0, 2.0])
    x = rng.standard_normal((10, 3))
    assert np.allclose(mixture_score(atom(a, 0.7), x), -(x - a) / 0.7)
    two = SmoothedMixture(np.array([[-1.0], [1.0]]), np.array([0.5, 0.5]), 1.0)
    assert np.allclose(mixture_score(two, np.array([0.0])), 0.0)


def test_score_matches_finite_differences(rng):
    for seed in range(3):
        r = np.random.default_rng(seed)
        mix = SmoothedMixture(r.standard_normal((5, 3)), r.dirichlet(np.ones(5)), r.uniform(0.2, 2))
        x = r.standard_normal((100, 3))
        s = mixture_score(mix, x)
        h = 1e-5
        fd = np.stack([(mixture_log_density(mix, x + h * e) - mixture_log_density(mix, x - h * e)) / (2 * h)
                       for e in np.eye(3)], axis=1)
        assert np.max(np.abs(fd - s) / np.maximum(np.abs(s), 1e-3)) <= 1e-5


def test_log_density_far_tail_is_finite():
    mix = SmoothedMixture(np.array([[0.0], [1.0]]), np.array([0.5, 0.5]), 1e-4)
    lp = mixture_log_density(mix, np.array([[50.0]]))
    assert np.isfinite(lp).all()


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_backends_agree(backend, rng):
    x, atoms = rng.standard_normal((300, 4)), rng.standard_normal((50, 4))
    logw = np.log(rng.dirichlet(np.ones(50)))
    lp, s = kernels.mixture_logpdf_score(x, atoms, logw, 0.3, True, backend=backend)
    lp0, s0 = kernels.mixture_logpdf_score(x, atoms, logw, 0.3, True, backend="python")
    assert np.allclose(lp, lp0, rtol=1e-12, atol=1e-12)
    assert np.allclose(s, s0, rtol=1e-10, atol=1e-12)
    d1, d2, i = kernels.two_nearest_sq(x, atoms, backend=backend)
    e1, e2, j = kernels.two_nearest_sq(x, atoms, backend="python")
    assert np.allclose(d1, e1) and np.allclose(d2, e2) and np.array_equal(i, j)


def test_weights_validated():
    with pytest.raises(ValueError):
        SmoothedMixture(np.zeros((2, 1)), np.array([0.5, 0.6]), 1.0)


def test_population_smoothed_examples():
    c = Circle(1.0)
    pop = population_smoothed(c, SurfaceDensity(), 0.5, 512)
    assert len(pop.atoms) == 512 and np.allclose(pop.weights, 1 / 512)
    gaps = np.diff(np.unwrap(np.arctan2(pop.atoms[:, 1], pop.atoms[:, 0])))
    assert np.allclose(gaps, gaps[0])
    vm = population_smoothed(c, SurfaceDensity("vonmises", kappa=2.0), 0.5, 512)
    th = np.arctan2(vm.atoms[:, 1], vm.atoms[:, 0])
    assert vm.weights.sum() == pytest.approx(1.0)
    assert np.allclose(vm.weights / vm.weights.sum(), np.exp(2 * np.cos(th)) / np.exp(2 * np.cos(th)).sum())


def test_population_density_matches_circle_convolution():
    t = 0.5
    pop = population_smoothed(Circle(1.0), SurfaceDensity(), t, 512)
    x = np.array([2.5, 0.7])

    def f(a):
        d2 = (x[0] - math.cos(a)) ** 2 + (x[1] - math.sin(a)) ** 2
        return math.exp(-d2 / (2 * t)) / (2 * math.pi * t) / (2 * math.pi)

    exact = integrate.quad(f, 0, 2 * math.pi, limit=200)[0]
    assert mixture_density(pop, x) == pytest.approx(exact, rel=0.005)


def test_population_resolution_guard():
    with pytest.raises(ResolutionTooCoarse):
        population_smoothed(Circle(1.0), SurfaceDensity(), 0.01, 64)
    assert min_resolution(Circle(1.0), 0.01) == math.ceil(2 * math.pi / 0.01)


def test_kl_examples(rng):
    p = atom([0.0])
    est = kl_estimate(p, p, 10_000, rng)
    assert abs(est.value) <= 3 * est.std_error + 1e-15
    for mu in (0.3, 1.0):
        e = kl_estimate(atom([0.0], 0.5), atom([mu], 0.5), 40_000, rng)
        assert abs(e.value - mu**2 / (2 * 0.5)) <= 3 * e.std_error
    c = Circle(1.0, ambient_dim=3)
    pop = population_smoothed(c, SurfaceDensity(), 0.5, 2 * min_resolution(c, 0.5))
    emp = SmoothedMixture.empirical(sample_surface(c, SurfaceDensity(), rng, 64), 0.5)
    e = kl_estimate(pop, emp, 5000, rng)
    assert e.value > 0 and math.isfinite(e.value)


def test_kl_control_variate_reduces_variance(rng):
    p, q = atom([0.0]), atom([0.5])
    a = kl_estimate(p, q, 20_000, np.random.default_rng(1), control_variate=True)
    b = kl_estimate(p, q, 20_000, np.random.default_rng(1), control_variate=False)
    assert a.std_error < b.std_error
    assert abs(a.value - b.value) <= 3 * b.std_error


def test_chi2_examples(rng):
    p = atom([0.0])
    e = chi2_upper_estimate(p, p, 10_000, rng)
    assert abs(e.value) <= 3 * e.std_error + 1e-15
    e = chi2_upper_estimate(atom([0.0]), atom([0.1]), 200_000, rng)
    assert abs(e.value - math.expm1(0.01)) <= 3 * e.std_error


def test_hellinger_examples(rng):
    p = atom([0.0])
    e = hellinger_sq_estimate(p, p, 10_000, rng)
    assert abs(e.value) <= 3 * e.std_error + 1e-15
    e = hellinger_sq_estimate(atom([0.0], 1e-3), atom([10.0], 1e-3), 10_000, rng)
    assert e.value == pytest.approx(2.0, abs=1e-9)
    # closed form for equal-variance Gaussians: 2 - 2 exp(-mu^2 / 8t)
    e = hellinger_sq_estimate(atom([0.0]), atom([1.0]), 100_000, rng)
    assert abs(e.value - (2 - 2 * math.exp(-1 / 8))) <= 3 * e.std_error


def test_corpus_inequalities():
    rng = np.random.default_rng(7)
    for name, p, q in divergence_corpus(0):
        kl = kl_estimate(p, q, 20_000, rng)
        chi = chi2_upper_estimate(p, q, 20_000, rng)
        h2 = hellinger_sq_estimate(p, q, 20_000, rng)
        assert kl.value <= chi.value + 3 * joint_se(kl, chi) + 1e-12, name
        assert h2.value <= kl.value + 3 * joint_se(kl, h2) + 1e-12, name


def test_fit_loglog_slope_exact():
    xs = np.array([1, 2, 4, 8.0])
    slope, ci = fit_loglog_slope(xs, 3 * xs**-1.0)
    assert slope == pytest.approx(-1.0) and ci[0] <= slope <= ci[1]


def test_rate_experiment_small_and_monotone_in_t0():
    c = Circle(1.0, ambient_dim=3)
    a = smoothing_rate_experiment(c, SurfaceDensity(), 0.5, [16, 64, 256], [0, 1, 2], 4000)
    assert a.slope < 0
    b = smoothing_rate_experiment(c, SurfaceDensity(), 1.0, [64], [0, 1, 2], 4000)
    assert b.medians[64] < a.medians[64]


def test_rate_experiment_single_atom_is_zero():
    pop = SmoothedMixture(np.array([[1.0, 0.0]]), np.ones(1), 0.5)
    rng = np.random.default_rng(0)
    e = kl_estimate(pop, SmoothedMixture.empirical(pop.atoms, 0.5), 1000, rng)
    assert e.value == 0.0


def test_gammainc_matches_chi_square():
    # the exact Gaussian-ball probability used by diagnostics, cross-checked here
    assert special.gammainc(0.5, 0.5) == pytest.approx(math.erf(1 / math.sqrt(2)))
