import math

import numpy as np
import pytest

from coarse_diffusion.diagnostics import hausdorff
from coarse_diffusion.errors import NoConvergence, OutsideDomain, TooFewNeighbors
from coarse_diffusion.geometry import Circle, CliffordTorus, Sphere, SurfaceDensity, sample_surface
from coarse_diffusion.measures import quadrature_net
from coarse_diffusion.potential import (
    Domain,
    PotentialNet,
    PotentialTrainConfig,
    check_membership,
    eikonal_residual,
    exact_potential,
    extract_zero_set,
    local_pca_tangent,
    pme_loss,
    potential_loss_and_grad,
    quadratic_potential,
    train_potential_score,
    zero_potential,
)
from coarse_diffusion.score import OracleMixture, ProjectionClass, make_perturbed


def circle_setup(n=64):
    c = Circle(1.0)
    anchors, _ = quadrature_net(c, n)
    return c, anchors, c.tangent_basis(anchors)


def test_eikonal_residual_exact(rng):
    c, anchors, _ = circle_setup()
    eta = exact_potential(c, anchors)
    x = eta.domain.sample(rng, 10_000)
    assert np.max(np.abs(eikonal_residual(eta, x))) <= 1e-8


def test_eikonal_residual_outside_domain():
    c, anchors, _ = circle_setup()
    with pytest.raises(OutsideDomain):
        eikonal_residual(exact_potential(c, anchors), np.array([[5.0, 5.0]]))


def test_degenerate_potentials(rng):
    c, anchors, tang = circle_setup()
    dom = Domain(anchors, 0.5)
    z = zero_potential(2, dom)
    assert np.all(eikonal_residual(z, dom.sample(rng, 100)) == 0)
    rep = check_membership(z, anchors, tang, 1, rng=rng)
    assert rep.eikonal.passed and not rep.rank.passed
    q = quadratic_potential(dom)
    assert np.allclose(eikonal_residual(q, dom.sample(rng, 100)), 0, atol=1e-12)
    assert not check_membership(q, anchors, tang, 1, rng=rng).anchoring.passed


@pytest.mark.parametrize("m", [Circle(1.0), Sphere(2, 1.0), CliffordTorus(1.0, 1.0)], ids=["circle", "sphere", "torus"])
def test_exact_membership_passes(m, rng):
    anchors, _ = quadrature_net(m, 100)
    rep = check_membership(exact_potential(m, anchors), anchors, m.tangent_basis(anchors), m.k, rng=rng)
    assert rep.all_passed, rep.to_dict()


def test_rotated_tangents_fail_angle(rng):
    c, anchors, tang = circle_setup()
    a = 0.3 * math.pi
    R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    rot = np.einsum("ij,njk->nik", R, tang.reshape(len(anchors), 2, 1))
    rep = check_membership(exact_potential(c, anchors), anchors, rot, 1, rng=rng)
    assert rep.rank.passed and not rep.angle.passed


def test_eta_star_is_half_squared_distance(rng):
    for m in (Circle(1.0), Sphere(2, 1.0), CliffordTorus(1.0, 1.0)):
        x, _ = m.sample_tube(rng, 1000, m.reach / 2)
        assert np.allclose(np.sqrt(2 * m.eta_star(x)), m.dist(x), atol=1e-9)


def test_hessian_spectrum_at_anchors():
    for m in (Circle(1.0), Sphere(2, 1.0)):
        anchors, _ = quadrature_net(m, 50)
        w = np.linalg.eigvalsh(exact_potential(m, anchors).hess(anchors))
        target = np.r_[np.zeros(m.k), np.ones(m.D - m.k)]
        assert np.max(np.abs(w - target)) <= 1e-5


def test_local_pca_examples(rng):
    c = Circle(1.0)
    th = rng.uniform(-0.2, 0.2, 50)
    pts = c.from_angle(th)
    T = local_pca_tangent(pts, np.array([1.0, 0.0]), 0.2, 1)
    ang = math.acos(min(1.0, abs(T[:, 0] @ np.array([0.0, 1.0]))))
    assert ang <= 0.05 * math.pi
    basis = np.linalg.qr(rng.standard_normal((5, 2)))[0]
    off = rng.standard_normal(5)
    plane = off + rng.standard_normal((40, 2)) @ basis.T
    T = local_pca_tangent(plane, off, 10.0, 2)
    # sines of principal angles; arccos near 1 loses half the digits
    assert np.linalg.norm(T - basis @ (basis.T @ T), 2) <= 1e-8
    with pytest.raises(TooFewNeighbors):
        local_pca_tangent(np.array([[0.0, 0], [1, 1], [2, 2.0]]), np.zeros(2), 5.0, 2)


def test_zero_set_exact(rng):
    c = Circle(1.0)
    seeds, _ = c.sample_tube(rng, 100, 0.25)
    zs = extract_zero_set(ProjectionClass.exact(c), 0.01, seeds, tol=1e-10)
    assert len(zs.points) == 100
    assert np.max(c.dist(zs.points)) <= 1e-8


def test_zero_set_perturbed(rng):
    c = Circle(1.0)
    seeds, _ = c.sample_tube(rng, 100, 0.25)
    # a normal error keeps every fibre a fixed line; tangential parts make zeros isolated
    f = make_perturbed(ProjectionClass.exact(c), 0.01, "normal", rng, c)
    zs = extract_zero_set(f, 0.01, seeds, tol=1e-10)
    assert len(zs.points) > 0
    assert np.max(c.dist(zs.points)) <= 0.02


def test_zero_set_zero_field(rng):
    c = Circle(1.0)
    seeds, _ = c.sample_tube(rng, 20, 0.25)
    z = ProjectionClass(lambda x: np.zeros_like(x), 2)
    zs = extract_zero_set(z, 0.01, seeds)
    assert len(zs.points) == 0 and zs.n_failed == 20
    assert np.array_equal(zs.final, seeds)
    with pytest.raises(NoConvergence):
        extract_zero_set(z, 0.01, seeds, strict=True)


def test_zero_set_monotone_in_eps():
    from coarse_diffusion.suites import zero_set

    v = zero_set()
    assert v.passed, v.metrics


def test_pme_examples(rng):
    c = Circle(1.0)
    data = sample_surface(c, SurfaceDensity(), rng, 100)
    dense = c.from_angle(np.linspace(0, 2 * math.pi, 20_000, endpoint=False))
    t = 1e-4
    est = pme_loss(dense, data, np.array([1.0, 0]), 0.5, t, 5000, rng)
    assert 0 < est.value / t <= 2
    exact = pme_loss(data, data, np.array([1.0, 0]), 0.5, 1e-10, 2000, rng)
    assert exact.value < 1e-8
    shifted = 1.1 * dense
    est = pme_loss(shifted, data, np.array([1.0, 0]), 0.5, t, 5000, rng)
    assert est.value == pytest.approx(0.01, abs=3 * t)


def test_potential_net_gradients(rng):
    net = PotentialNet(2, 1, 6, rng)
    x = rng.standard_normal((4, 2))
    G, e = rng.standard_normal((4, 2)), rng.standard_normal(4)

    def objective():
        return float(np.sum(G * net.grad(x)) + np.sum(e * net.eta(x)))

    g = net.backward(x, G, e)
    h = 1e-6
    for k, p in net.params.items():
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = objective()
            flat[i] = old - h
            fm = objective()
            flat[i] = old
            assert (fp - fm) / (2 * h) == pytest.approx(g[k].reshape(-1)[i], rel=1e-5, abs=1e-7)


def test_potential_input_gradient_is_gradient(rng):
    net = PotentialNet(3, 2, 8, rng)
    x = rng.standard_normal((5, 3))
    h = 1e-6
    fd = np.stack([(net.eta(x + h * e) - net.eta(x - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    assert np.allclose(fd, net.grad(x), atol=1e-7)


def test_stationary_at_exact_initialisation():
    c, anchors, _ = circle_setup()
    rng = np.random.default_rng(0)
    data = sample_surface(c, SurfaceDensity(), rng, 200)
    base = exact_potential(c)
    cfg = PotentialTrainConfig(steps=300, zero_init=True, seed=0)
    field = train_potential_score(data, anchors, cfg, 1, base=base)
    tr = np.array(field.trace)
    assert np.mean(tr[-50:]) <= 2 * np.mean(tr[:50])


@pytest.mark.slow
def test_trained_potential_vs_oracle_baseline():
    c = Circle(1.0)
    rng = np.random.default_rng(0)
    data = sample_surface(c, SurfaceDensity(), rng, 200)
    dense = c.from_angle(np.linspace(0, 2 * math.pi, 4000, endpoint=False))
    seeds, _ = c.sample_tube(rng, 400, 0.2)
    field = train_potential_score(data, data, PotentialTrainConfig(seed=0), 1)
    zs = extract_zero_set(field, 0.01, seeds, tol=1e-8, max_iter=2000)
    base = extract_zero_set(OracleMixture(data), 0.01, seeds, tol=1e-8, max_iter=2000)
    assert len(zs.points) > 0
    assert hausdorff(zs.points, dense) <= 5 * hausdorff(base.points, dense)


@pytest.mark.slow
def test_eikonal_penalty_ablation():
    c = Circle(1.0)
    pen, free = [], []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        data = sample_surface(c, SurfaceDensity(), rng, 200)
        pts = Domain(data, 0.5).sample(np.random.default_rng(99), 4000)
        for lam, out in ((1.0, pen), (0.0, free)):
            _, net = train_potential_score(data, data, PotentialTrainConfig(lam_eik=lam, seed=seed, steps=1000), 1,
                                           return_net=True)
            out.append(np.median(np.abs(eikonal_residual(net.as_potential(), pts))))
    assert np.median(free) > np.median(pen)


def test_loss_parts_present(rng):
    net = PotentialNet(2, 1, 4, rng)
    x0 = rng.standard_normal((8, 2))
    loss, g, parts = potential_loss_and_grad(net, x0, x0 + 0.1, x0, x0[:3], 1.0, 1.0)
    assert set(parts) == {"ldsm", "eikonal", "anchor"}
    assert set(g) == set(net.params)
