"""Invariant batteries with fixed seeds. Each returns a Verdict whose metrics
carry the measured margins; a failed check is a verdict, never an exception."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import (cmin_lower_bound, cmin_parameters, coverage_report, covering_radius,
                          gaussian_ball_lower, memorization_fraction, projection_error, tangential_drift,
                          volume_constants)
from .geometry import Circle, CliffordTorus, Sphere, SurfaceDensity, sample_surface
from .measures import (SmoothedMixture, chi2_upper_estimate, fit_loglog_slope, joint_se, kl_estimate,
                       quadrature_net, smoothing_rate_experiment)
from .nn import ScoreNet, dsm_loss_and_grad
from .potential import check_membership, eikonal_residual, exact_potential, extract_zero_set
from .sampler import NoiseSchedule, SamplerConfig, hybrid_sample, pf_ode_run
from .score import OracleMixture, Perturbed, ProjectionClass, ScoreField, excess_risk_check, make_perturbed


@dataclass
class Verdict:
    name: str
    criterion: int
    passed: bool
    hard: bool = True
    metrics: dict = field(default_factory=dict)
    wall_s: float = 0.0

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        gate = "" if self.hard else " (soft)"
        return f"[{tag}] {self.criterion:>2} {self.name}{gate}: {self.metrics.get('summary', '')}"

    def to_dict(self):
        return {"name": self.name, "criterion": self.criterion, "passed": bool(self.passed),
                "hard": self.hard, "wall_s": self.wall_s, "metrics": _jsonable(self.metrics)}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def _timed(fn):
    def run(*args, **kwargs):
        start = time.time()
        v = fn(*args, **kwargs)
        v.wall_s = time.time() - start
        return v

    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


# -- 1: KL rate ---------------------------------------------------------------

@_timed
def kl_rate(seed=0, n_seeds=10, n_mc=20_000, N_grid=(32, 64, 128, 256, 512, 1024)):
    """Median KL(population || empirical) against N on the unit circle in R^3."""
    m = Circle(1.0, ambient_dim=3)
    res = smoothing_rate_experiment(m, SurfaceDensity(), 0.5, list(N_grid),
                                    [seed + i for i in range(n_seeds)], n_mc)
    lo, hi = -1.35, -0.65
    ok = lo <= res.slope <= hi
    return Verdict("kl_rate", 1, ok, metrics={
        **res.summary(), "window": [lo, hi],
        "summary": f"slope {res.slope:.3f} (95% CI {res.slope_ci[0]:.3f}..{res.slope_ci[1]:.3f}), window [{lo}, {hi}]"})


# -- 2: KL vs chi^2 -------------------------------------------------------------

def divergence_corpus(seed=0):
    """Twelve (p, q) pairs of smoothed mixtures."""
    rng = np.random.default_rng(seed)
    pairs = []
    for shift in (0.1, 0.5, 1.0):
        pairs.append((f"gauss-shift-{shift}", SmoothedMixture(np.zeros((1, 2)), np.ones(1), 1.0),
                      SmoothedMixture(np.array([[shift, 0.0]]), np.ones(1), 1.0)))
    circ = Circle(1.0)
    pop = SmoothedMixture(quadrature_net(circ, 512)[0], np.full(512, 1 / 512), 0.5)
    for n in (16, 64, 256):
        pts = sample_surface(circ, SurfaceDensity(), rng, n)
        pairs.append((f"circle-pop-vs-emp-{n}", pop, SmoothedMixture.empirical(pts, 0.5)))
    for w in (0.5, 0.8, 0.95):
        a = np.array([[-1.0], [1.0]])
        pairs.append((f"two-atom-w{w}", SmoothedMixture(a, np.array([0.5, 0.5]), 0.25),
                      SmoothedMixture(a, np.array([w, 1 - w]), 0.25)))
    for i in range(3):
        a, b = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        wa, wb = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        pairs.append((f"random-5atom-{i}", SmoothedMixture(a, wa, 1.0), SmoothedMixture(b, wb, 1.0)))
    return pairs


@_timed
def kl_chi2(seed=0, n_mc=50_000):
    """KL(p||q) <= chi^2(p||q) + 3 joint SE on every corpus pair."""
    rng = np.random.default_rng(seed)
    rows, worst = [], -math.inf
    for name, p, q in divergence_corpus(seed):
        kl = kl_estimate(p, q, n_mc, rng)
        chi = chi2_upper_estimate(p, q, n_mc, rng)
        se = joint_se(kl, chi)
        margin = chi.value + 3 * se - kl.value
        worst = max(worst, -margin)
        rows.append({"pair": name, "kl": kl.value, "chi2": chi.value, "se_joint": se, "margin": margin})
    ok = all(r["margin"] >= 0 for r in rows)
    return Verdict("kl_chi2", 2, ok, metrics={
        "pairs": rows, "summary": f"{sum(r['margin'] >= 0 for r in rows)}/{len(rows)} pairs dominated, "
                                  f"min margin {min(r['margin'] for r in rows):.3g}"})


# -- 3: excess-risk identity ------------------------------------------------------

class _Shifted(ScoreField):
    def __init__(self, base, fn):
        self.base, self.fn, self.dim = base, fn, base.dim

    def _eval(self, x, t):
        return self.base(x, t) + self.fn(x)


@_timed
def excess_risk(seed=0, n_mc=100_000, n_atoms=64, t=0.5):
    """DSM(s) - DSM(s*) equals E||s - s*||^2 within 2% for three perturbation families."""
    rng = np.random.default_rng(seed)
    atoms = Circle(1.0).from_angle(2 * math.pi * np.arange(n_atoms) / n_atoms)
    mix = SmoothedMixture.empirical(atoms, t)
    star = OracleMixture(atoms)
    c = rng.standard_normal(2)
    c *= 2.0 / np.linalg.norm(c)
    A = rng.standard_normal((2, 2))
    om, ph, amp = rng.standard_normal((6, 2)) * 2, rng.uniform(0, 2 * math.pi, 6), rng.standard_normal((6, 2))
    families = {
        "constant": lambda x: np.broadcast_to(c, x.shape),
        "linear": lambda x: x @ A.T,
        "fourier": lambda x: np.sin(x @ om.T + ph) @ amp,
    }
    rows = {}
    for name, fn in families.items():
        r = excess_risk_check(_Shifted(star, fn), star, mix, n_mc, rng)
        rows[name] = {"lhs": r.lhs, "rhs": r.rhs, "rel_gap": r.rel_gap, "lhs_se": r.lhs_se}
    worst = max(r["rel_gap"] for r in rows.values())
    return Verdict("excess_risk", 3, worst <= 0.02, metrics={
        "families": rows, "summary": f"max relative gap {worst:.4f} (tol 0.02)"})


# -- 4: contraction -------------------------------------------------------------

CONTRACTION_KINDS = ("constant-direction", "tangential", "random-smooth")


@_timed
def contraction(seed=0, n_starts=1000, eps_grid=(0.01, 0.05), t0=0.25, n_steps=256):
    """dist(Phi(x), M) <= sqrt(2) eps + dist(x, M) sqrt(tau/t0) + 10 integrator_tol."""
    m = Circle(1.0, ambient_dim=3)
    base = ProjectionClass.exact(m)
    rows, violations = [], 0
    for i, eps in enumerate(eps_grid):
        tau = t0 * eps**3
        for j, kind in enumerate(CONTRACTION_KINDS):
            rng = np.random.default_rng([seed, i, j])
            field_ = make_perturbed(base, eps, kind, rng, m)
            x, _ = m.sample_tube(rng, n_starts, m.reach / 4)
            end = pf_ode_run(field_, x, t0, tau, n_steps)
            fine = pf_ode_run(field_, x, t0, tau, 2 * n_steps)
            tol = float(np.max(np.linalg.norm(end - fine, axis=1)))
            bound = math.sqrt(2) * eps + m.dist(x) * math.sqrt(tau / t0) + 10 * tol
            d = m.dist(end)
            v = int(np.sum(d > bound))
            violations += v
            rows.append({"eps": eps, "kind": kind, "violations": v, "max_dist": float(d.max()),
                         "min_slack": float(np.min(bound - d)), "integrator_tol": tol})
    return Verdict("contraction", 4, violations == 0, metrics={
        "cells": rows, "summary": f"{violations} violations over {len(rows)} cells x {n_starts} starts"})


# -- 5: tangential drift ------------------------------------------------------------

@_timed
def drift(seed=0, n_starts=200, eps_grid=(0.003, 0.01, 0.03, 0.1), t0=0.25, n_steps=256):
    """Fitted exponent of max geodesic drift against eps (tangential errors)."""
    m = Circle(1.0, ambient_dim=3)
    base = ProjectionClass.exact(m)
    rng = np.random.default_rng(seed)
    x, _ = m.sample_tube(rng, n_starts, m.reach / 4)
    drifts = []
    for eps in eps_grid:
        cfg = SamplerConfig(T=1.0, t0=t0, tau=t0 * eps**3, n_ode_steps=n_steps)
        field_ = make_perturbed(base, eps, "tangential", rng, m)
        drifts.append(float(np.max(tangential_drift(m, field_, cfg, x))))
    slope, ci = fit_loglog_slope(eps_grid, drifts)
    lo, hi = 0.4, 0.65
    # the sqrt(eps) envelope with the constant fitted at the largest eps
    C = drifts[-1] / math.sqrt(eps_grid[-1])
    envelope = all(d <= C * math.sqrt(e) * (1 + 1e-9) for e, d in zip(eps_grid, drifts))
    return Verdict("drift", 5, lo <= slope <= hi, metrics={
        "eps": list(eps_grid), "max_drift": drifts, "exponent": slope, "exponent_ci95": list(ci),
        "window": [lo, hi], "sqrt_envelope_holds": envelope,
        "summary": f"exponent {slope:.3f} (window [{lo}, {hi}]); drift/(eps ln(1/eps)) = "
                   + ", ".join(f"{d / (e * math.log(1 / e)):.2f}" for e, d in zip(eps_grid, drifts))})


# -- 6: coverage separation ------------------------------------------------------------

@_timed
def coverage(seed=0, n_seeds=5, N=200, t0=0.25, tau=0.0025, rho=0.5, n_samples=10_000,
             T=4.0, n_sde=400, n_ode=128):
    """Empirical measure leaves a hole; the hybrid sampler covers with c_hat >= c_min > 0."""
    m = Circle(1.0)
    dens = SurfaceDensity()
    rows, ok_all = [], True
    for s in range(seed, seed + n_seeds):
        rng = np.random.default_rng(s)
        train = sample_surface(m, dens, rng, N)
        field_ = OracleMixture(train)
        delta = 0.25 * covering_radius(train, m)
        perr = projection_error(lambda x, t: field_(x, tau), m, tau, 2000, rng)
        alpha = 4 * perr.quantiles["0.5"]
        n_centers = int(math.ceil(2 * math.pi * m.radius / (delta / 2)))
        a = cmin_parameters(delta, rho, m.reach)
        c_vol, C_vol = volume_constants(m, delta)
        c_min = cmin_lower_bound(1.0, 1.0, m.k, m.D, t0, rho, c_vol, C_vol, a)
        emp = coverage_report(train, m, dens, delta, alpha, n_centers)
        cfg = SamplerConfig(T=T, t0=t0, tau=tau, n_sde_steps=n_sde, n_ode_steps=n_ode)
        gen = hybrid_sample(field_, n_samples, cfg, rng)
        hyb = coverage_report(gen, m, dens, delta, alpha, n_centers, c_min=c_min)
        ok = emp.c_hat == 0 and hyb.c_hat >= c_min > 0
        ok_all &= ok
        rows.append({"seed": s, "delta": delta, "alpha": alpha, "n_centers": n_centers, "c_min": c_min,
                     "c_hat_empirical": emp.c_hat, "c_hat_hybrid": hyb.c_hat, "passed": ok})
    return Verdict("coverage", 6, ok_all, metrics={
        "seeds": rows, "summary": f"{sum(r['passed'] for r in rows)}/{len(rows)} seeds; min hybrid c_hat "
                                  f"{min(r['c_hat_hybrid'] for r in rows):.3g} vs c_min "
                                  f"{max(r['c_min'] for r in rows):.3g}"})


# -- 7: Gaussian-ball bound ------------------------------------------------------------

@_timed
def gauss_ball(seed=0, n_mc=100_000):
    """Explicit lower bound <= MC estimate of P(||G_m|| <= r) + 3 SE in all cells."""
    rng = np.random.default_rng(seed)
    rows = []
    for mdim in (1, 2, 5):
        for t0 in (0.25, 1.0):
            for r in (0.5, 1.0):
                g = math.sqrt(t0) * rng.standard_normal((n_mc, mdim))
                hit = np.linalg.norm(g, axis=1) <= r
                p = float(hit.mean())
                se = math.sqrt(max(p * (1 - p), 1e-300) / n_mc)
                lb = gaussian_ball_lower(mdim, t0, r)
                rows.append({"m": mdim, "t0": t0, "r": r, "bound": lb, "mc": p, "se": se,
                             "passed": lb <= p + 3 * se})
    n_ok = sum(r["passed"] for r in rows)
    return Verdict("gauss_ball", 7, n_ok == len(rows), metrics={
        "cells": rows, "summary": f"{n_ok}/{len(rows)} cells"})


# -- 8: eikonal / membership ---------------------------------------------------------------

@_timed
def eikonal(seed=0, n_points=10_000, n_anchors=400):
    """eta* passes the six membership checks; eikonal residual and Hessian spectrum."""
    rows, ok_all = {}, True
    for name, m in (("circle", Circle(1.0)), ("sphere", Sphere(2, 1.0)),
                    ("torus", CliffordTorus(1.0, 1.0))):
        rng = np.random.default_rng(seed)
        anchors, _ = quadrature_net(m, n_anchors)
        eta = exact_potential(m, anchors)
        rep = check_membership(eta, anchors, m.tangent_basis(anchors), m.k, rng=rng)
        pts = eta.domain.sample(rng, n_points)
        res = float(np.max(np.abs(eikonal_residual(eta, pts))))
        spec = np.linalg.eigvalsh(eta.hess(anchors))
        target = np.concatenate([np.zeros(m.k), np.ones(m.D - m.k)])
        spec_err = float(np.max(np.abs(spec - target)))
        ok = rep.all_passed and res <= 1e-8 and spec_err <= 1e-5
        ok_all &= ok
        rows[name] = {"membership": {k: c.passed for k, c in rep.checks().items()},
                      "max_residual": res, "hessian_spectrum_err": spec_err, "passed": ok}
    return Verdict("eikonal", 8, ok_all, metrics={
        "manifolds": rows, "summary": ", ".join(
            f"{k}: residual {v['max_residual']:.1e}, spectrum err {v['hessian_spectrum_err']:.1e}"
            for k, v in rows.items())})


# -- 9: zero-set recovery ------------------------------------------------------------------

@_timed
def zero_set(seed=0, n_seeds=10, n_points=100, eps_grid=(0.0, 0.005, 0.01, 0.05), t=0.01, tol=1e-10):
    """Directed Hausdorff distance of the recovered zero set to M against eps."""
    m = Sphere(2, 1.0)
    base = ProjectionClass.exact(m)
    per_eps = []
    for eps in eps_grid:
        vals = []
        for s in range(seed, seed + n_seeds):
            rng = np.random.default_rng(s)
            field_ = make_perturbed(base, eps, "normal", rng, m) if eps > 0 else base
            x, _ = m.sample_tube(rng, n_points, m.reach / 4)
            zs = extract_zero_set(field_, t, x, tol=tol)
            vals.append(float(np.max(m.dist(zs.points))) if len(zs.points) else math.inf)
        per_eps.append(float(np.median(vals)))
    mono = all(b >= a for a, b in zip(per_eps, per_eps[1:]))
    within = all(d <= 2 * e + 10 * tol for e, d in zip(eps_grid, per_eps))
    return Verdict("zero_set", 9, mono and within, metrics={
        "eps": list(eps_grid), "median_hausdorff": per_eps, "monotone": mono, "within_2eps": within,
        "summary": "d_H = " + ", ".join(f"{d:.3g}" for d in per_eps)})


# -- 10: large-noise reduction -------------------------------------------------------------

def tv_hist(a, b, bins=20):
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    edges = np.linspace(lo, hi, bins + 1)
    pa, _ = np.histogram(a, edges)
    pb, _ = np.histogram(b, edges)
    return 0.5 * float(np.abs(pa / len(a) - pb / len(b)).sum())


@_timed
def large_noise(seed=0, n=10_000, t0=0.25, tau=1e-3, T=10.0, n_sde=1000, n_ode=256):
    """Hybrid sampler output versus the ODE pushforward of mu_emp * N(0, t0)."""
    rng = np.random.default_rng(seed)
    atoms = np.array([[-1.0], [1.0]])
    field_ = OracleMixture(atoms)
    cfg = SamplerConfig(T=T, t0=t0, tau=tau, n_sde_steps=n_sde, n_ode_steps=n_ode)
    hyb = hybrid_sample(field_, n, cfg, rng)[:, 0]
    x0 = atoms[rng.integers(0, 2, n)] + math.sqrt(t0) * rng.standard_normal((n, 1))
    direct = pf_ode_run(field_, x0, t0, tau, n_ode)[:, 0]
    tv = tv_hist(hyb, direct)
    return Verdict("large_noise", 10, tv <= 0.05, metrics={
        "tv": tv, "summary": f"20-bin TV {tv:.4f} (tol 0.05)"})


# -- 11: gradient check --------------------------------------------------------------------

@_timed
def gradcheck(seed=0, width=8, n_blocks=2, batch=6, h=1e-4, rtol=1e-4, atol=1e-9):
    """Every ScoreNet parameter gradient against central differences."""
    rng = np.random.default_rng(seed)
    sch = NoiseSchedule.vp(beta_max=5.0, t_min=1e-3)
    net = ScoreNet(3, width, n_blocks, schedule=sch, rng=rng)
    net.params["out.W"][...] = rng.standard_normal(net.params["out.W"].shape) * 0.3
    net.params["out.b"][...] = rng.standard_normal(net.params["out.b"].shape) * 0.3
    x0, eps = rng.standard_normal((batch, 3)), rng.standard_normal((batch, 3))
    t = rng.uniform(0.05, 1.0, batch)
    _, grads = dsm_loss_and_grad(net, x0, eps, t, sch)
    worst, n_bad, n_total = 0.0, 0, 0
    for name, p in net.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp, _ = dsm_loss_and_grad(net, x0, eps, t, sch)
            flat[i] = old - h
            lm, _ = dsm_loss_and_grad(net, x0, eps, t, sch)
            flat[i] = old
            fd = (lp - lm) / (2 * h)
            err = abs(fd - g[i])
            scale = max(abs(fd), abs(g[i]))
            worst = max(worst, err / max(scale, atol))
            n_bad += err > rtol * scale + atol
            n_total += 1
    return Verdict("gradcheck", 11, n_bad == 0, metrics={
        "n_params": n_total, "n_mismatch": int(n_bad), "worst_rel_err": worst,
        "summary": f"{n_bad}/{n_total} mismatches, worst relative error {worst:.2e}"})


# -- 12: memorisation ordering ---------------------------------------------------------------

@_timed
def memorization(seed=0, n_seeds=3, scale=0.25, dtype="float32", progress=None):
    """Median final memorisation: deep_memo > gen and gen <= 0.2 (soft gate)."""
    from .presets import preset_config, run_preset

    out = {}
    for name in ("deep_memo", "gen"):
        fr = []
        for s in range(seed, seed + n_seeds):
            cfg = preset_config(name, scale, s)
            cfg = cfg.updated({"eval_interval": max(cfg.steps, 1), "dtype": dtype})
            run = run_preset(cfg)
            fr.append(run.trace[-1]["memorization"])
            if progress:
                progress(name, s, run)
        out[name] = {"fractions": fr, "median": float(np.median(fr))}
    dm, gm = out["deep_memo"]["median"], out["gen"]["median"]
    ok = dm > gm and gm <= 0.2
    # reference level: fresh Haar samples against a Haar training set of gen's size
    m = preset_config("gen", scale, seed).manifold_obj()
    n = preset_config("gen", scale, seed).n_train
    rng = np.random.default_rng(seed)
    base = memorization_fraction(m.sample_uniform(rng, 20_000).reshape(20_000, -1),
                                 m.sample_uniform(rng, n).reshape(n, -1)).fraction_memorized
    return Verdict("memorization", 12, ok, hard=False, metrics={
        **out, "haar_baseline": base,
        "summary": f"median deep_memo {dm:.3f} vs gen {gm:.3f} (gen <= 0.2 required; "
                   f"exact Haar samples score {base:.3f})"})


@_timed
def trend(seed=0, n_seeds=3, scale=0.25, dtype="float32"):
    """Geometry-before-memorisation on every preset (trend check, not a gate)."""
    from .presets import PRESETS, preset_config, run_preset

    rows = {}
    for name in PRESETS:
        votes = []
        for s in range(seed, seed + n_seeds):
            cfg = preset_config(name, scale, s).updated({"dtype": dtype})
            votes.append(run_preset(cfg).summary["trend"]["precedes"])
        known = [v for v in votes if v is not None]
        rows[name] = {"votes": votes, "precedes": bool(np.median(known) >= 0.5) if known else None}
    n = sum(1 for r in rows.values() if r["precedes"])
    return Verdict("trend", 0, n >= 4, hard=False, metrics={
        "presets": rows, "summary": f"alignment precedes memorisation in {n}/6 presets"})


SUITES = {
    "kl_rate": kl_rate,
    "kl_chi2": kl_chi2,
    "excess_risk": excess_risk,
    "contraction": contraction,
    "drift": drift,
    "coverage": coverage,
    "gauss_ball": gauss_ball,
    "eikonal": eikonal,
    "zero_set": zero_set,
    "large_noise": large_noise,
    "gradcheck": gradcheck,
    "memorization": memorization,
    "trend": trend,
}
# batteries run by "all": everything except the long training runs
FAST = tuple(k for k in SUITES if k not in ("memorization", "trend"))


def run_suite(name, **kwargs) -> Verdict:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return SUITES[name](**kwargs)
