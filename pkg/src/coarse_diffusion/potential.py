"""Distance potentials: eikonal residual, class-membership checks, local PCA,
zero-set extraction, the PME loss and an eikonal-penalised potential network.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import subspace_angles
from scipy.spatial import cKDTree

from . import kernels
from .errors import EmptyNeighborhood, NoConvergence, OutsideDomain, TooFewNeighbors
from .geometry import Manifold
from .nn import OptimState, adamw_step
from .score import DsmEstimate, ProjectionClass


def _rows(x):
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


class Domain:
    """Union of Euclidean balls of common radius around anchor points."""

    def __init__(self, anchors, radius):
        self.anchors = _rows(anchors)
        self.radius = float(radius)

    def contains(self, x, slack=0.0):
        d2, _ = kernels.nearest_sq(_rows(x), self.anchors)
        return np.sqrt(d2) < self.radius + slack

    def sample(self, rng, n):
        """Uniform in a randomly chosen ball (not uniform on the union)."""
        D = self.anchors.shape[1]
        idx = rng.integers(0, len(self.anchors), n)
        g = rng.standard_normal((n, D))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = self.radius * rng.random(n) ** (1.0 / D)
        return self.anchors[idx] + r[:, None] * g

    def boundary(self, rng, n_per_anchor):
        """Boundary points with their outward normals ``(x - y_i)/||x - y_i||``."""
        D = self.anchors.shape[1]
        n = len(self.anchors) * n_per_anchor
        g = rng.standard_normal((n, D))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        centers = np.repeat(self.anchors, n_per_anchor, axis=0)
        x = centers + self.radius * g
        d2, _ = kernels.nearest_sq(x, self.anchors)
        keep = np.sqrt(d2) >= self.radius * (1.0 - 1e-9)
        return x[keep], g[keep]


class Potential:
    """Scalar potential with gradient; Hessian by central differences of the gradient."""

    fd_step = 1e-5

    def __init__(self, eta, grad, domain: Domain | None = None, hess=None):
        self._eta = eta
        self._grad = grad
        self._hess = hess
        self.domain = domain

    def eta(self, x):
        return self._eta(_rows(x))

    def grad(self, x):
        return self._grad(_rows(x))

    def hess(self, x):
        x = _rows(x)
        if self._hess is not None:
            return self._hess(x)
        D = x.shape[1]
        h = self.fd_step
        out = np.empty((len(x), D, D))
        for i in range(D):
            e = np.zeros(D)
            e[i] = h
            out[:, :, i] = (self.grad(x + e) - self.grad(x - e)) / (2 * h)
        return 0.5 * (out + np.swapaxes(out, 1, 2))

    def score_field(self, dim):
        dom = None if self.domain is None else self.domain.contains
        return ProjectionClass(self.grad, dim, dom, eta=self.eta)


def exact_potential(m: Manifold, anchors=None, radius=None):
    """eta* = dist^2 / 2 with gradient x - proj(x)."""
    dom = None
    if anchors is not None:
        dom = Domain(anchors, m.reach / 2 if radius is None else radius)
    return Potential(lambda x: np.asarray(m.eta_star(x)), lambda x: x - m.project(x), dom)


def zero_potential(dim, domain=None):
    return Potential(lambda x: np.zeros(len(x)), lambda x: np.zeros_like(x), domain,
                     hess=lambda x: np.zeros((len(x), dim, dim)))


def quadratic_potential(domain=None):
    return Potential(lambda x: 0.5 * np.sum(x * x, axis=1), lambda x: x.copy(), domain)


def eikonal_residual(eta: Potential, x):
    """``||grad eta||^2 - 2 eta`` at each point; points must lie in the domain."""
    x = _rows(x)
    if eta.domain is not None and not np.all(eta.domain.contains(x)):
        raise OutsideDomain("eikonal residual requested outside the potential's domain")
    g = eta.grad(x)
    return np.sum(g * g, axis=1) - 2.0 * eta.eta(x)


# -- membership -----------------------------------------------------------------

@dataclass
class Check:
    passed: bool
    worst: float
    detail: dict = field(default_factory=dict)


@dataclass
class MembershipReport:
    eikonal: Check
    non_escape: Check
    anchoring: Check
    rank: Check
    angle: Check
    smoothness: Check

    @property
    def all_passed(self):
        return all(c.passed for c in self.checks().values())

    def checks(self):
        return {"eikonal": self.eikonal, "non_escape": self.non_escape, "anchoring": self.anchoring,
                "rank": self.rank, "angle": self.angle, "smoothness": self.smoothness}

    def to_dict(self):
        return {k: asdict(v) for k, v in self.checks().items()} | {"all_passed": self.all_passed}


def hessian_rank_and_kernel(hess, rel_threshold=0.1):
    """Rank and kernel basis with eigenvalues below ``rel_threshold * max`` as kernel."""
    w, v = np.linalg.eigh(hess)
    top = np.max(np.abs(w))
    if top <= 1e-12:
        return 0, v
    ker = np.abs(w) < rel_threshold * top
    return int((~ker).sum()), v[:, ker]


def check_membership(eta: Potential, anchors, tangents, k, L=None, n_samples=2000, rng=None,
                     eik_tol=1e-8, anchor_tol=1e-8, angle_max=0.1 * math.pi, boundary_per_anchor=16):
    """Evaluate the six constraints on anchors plus sampled domain and boundary points."""
    rng = np.random.default_rng(0) if rng is None else rng
    anchors = _rows(anchors)
    N, D = anchors.shape
    tangents = np.asarray(tangents).reshape(N, D, k)
    dom = eta.domain

    pts = dom.sample(rng, n_samples) if dom is not None else anchors
    res = np.abs(eikonal_residual(eta, pts))
    eik = Check(bool(res.max() <= eik_tol), float(res.max()), {"n_points": len(pts)})

    if dom is not None:
        bx, bn = dom.boundary(rng, boundary_per_anchor)
        ip = np.sum(eta.grad(bx) * bn, axis=1) if len(bx) else np.array([np.inf])
        ne = Check(bool(ip.min() > 0), float(ip.min()), {"delta": float(ip.min()), "n_points": len(bx)})
    else:
        ne = Check(False, float("nan"), {"reason": "no domain"})

    a = np.abs(eta.eta(anchors))
    anc = Check(bool(a.max() <= anchor_tol), float(a.max()))

    H = eta.hess(anchors)
    defects, worst_angle = 0, 0.0
    for i in range(N):
        rank, ker = hessian_rank_and_kernel(H[i])
        if rank != D - k:
            defects += 1
            worst_angle = math.pi / 2
            continue
        worst_angle = max(worst_angle, float(np.max(subspace_angles(tangents[i], ker))))
    rk = Check(defects == 0, float(defects), {"expected_rank": D - k})
    ang = Check(bool(defects == 0 and worst_angle <= angle_max), worst_angle, {"threshold": angle_max})

    probe = pts[: min(len(pts), 200)]
    g1 = float(np.max(np.linalg.norm(eta.grad(probe), axis=1)))
    Hp = eta.hess(probe)
    g2 = float(np.max(np.linalg.norm(Hp, ord=2, axis=(1, 2))))
    v = rng.standard_normal((len(probe), D))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    h = 1e-3
    d3 = np.array([np.linalg.norm((eta.hess(p + h * vi)[0] - eta.hess(p - h * vi)[0]) / (2 * h), 2)
                   for p, vi in zip(probe[:50], v[:50])])
    g3 = float(d3.max()) if len(d3) else 0.0
    norms = [g1, g2, g3]
    if L is None:
        sm = Check(True, max(norms), {"L_hat": norms, "asserted": False})
    else:
        ok = all(n <= l for n, l in zip(norms, L))
        sm = Check(bool(ok), max(n / l for n, l in zip(norms, L)), {"L_hat": norms, "L": list(L)})
    return MembershipReport(eik, ne, anc, rk, ang, sm)


# -- local PCA --------------------------------------------------------------------

def local_pca_tangent(points, x_ref, h, k):
    """Top-k principal directions of the neighbours within ``h`` of ``x_ref``."""
    points = _rows(points)
    nb = points[np.linalg.norm(points - np.asarray(x_ref, dtype=np.float64), axis=1) <= h]
    if len(nb) < k + 1:
        raise TooFewNeighbors(f"{len(nb)} neighbours within h={h}, need at least {k + 1}")
    c = nb - nb.mean(axis=0)
    w, v = np.linalg.eigh(c.T @ c / len(nb))
    w, v = w[::-1], v[:, ::-1]
    if w[k - 1] <= 1e-12 * max(w[0], 1e-300):
        raise TooFewNeighbors(f"neighbourhood spans fewer than {k} directions")
    return v[:, :k]


# -- zero set ------------------------------------------------------------------------

@dataclass
class ZeroSet:
    points: np.ndarray
    converged: np.ndarray
    final: np.ndarray
    iterations: int

    @property
    def n_failed(self):
        return int((~self.converged).sum())


def _dedup(points, radius):
    if len(points) == 0:
        return points
    tree = cKDTree(points)
    keep = np.ones(len(points), dtype=bool)
    for i in range(len(points)):
        if not keep[i]:
            continue
        for j in tree.query_ball_point(points[i], radius):
            if j > i:
                keep[j] = False
    return points[keep]


def extract_zero_set(field, t, seeds, tol=1e-10, max_iter=500, probe=None, strict=False) -> ZeroSet:
    """Fixed points of the denoiser ``x -> x + t s(x, t)``.

    A seed counts as converged when the step falls below ``tol``, the scaled
    residual ``t ||s||`` is below ``10 tol`` and the map is not flat around
    the limit (some coordinate probe of size ``probe`` moves by at least a
    quarter of the probe). The last condition rejects the trivial zero field.
    """
    x = _rows(seeds).copy()
    n, D = x.shape
    probe = max(100 * tol, 1e-6) if probe is None else probe
    done = np.zeros(n, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        active = ~done
        if not np.any(active):
            break
        step = t * field(x[active], t)
        x[active] += step
        small = np.linalg.norm(step, axis=1) < tol
        idx = np.flatnonzero(active)
        done[idx[small]] = True
    resid = t * np.linalg.norm(field(x, t), axis=1)
    conv = done & (resid < 10 * tol)
    if np.any(conv):
        moved = np.zeros(n)
        for i in range(D):
            xp = x.copy()
            xp[:, i] += probe
            moved = np.maximum(moved, t * np.linalg.norm(field(xp, t), axis=1))
        conv &= moved >= 0.25 * probe
    if strict and not np.any(conv):
        raise NoConvergence("no seed converged to a non-degenerate zero")
    return ZeroSet(_dedup(x[conv], tol), conv, x, it)


# -- PME loss ----------------------------------------------------------------------

def pme_loss(m_hat, data, x_ref, h, t, n_mc, rng) -> DsmEstimate:
    """E ||x0 + z - M_hat||^2 with x0 uniform on data in B(x_ref, h) and
    z ~ N(0, tI) truncated to ||z|| <= h (rejection sampling)."""
    data = _rows(data)
    m_hat = _rows(m_hat)
    local = data[np.linalg.norm(data - np.asarray(x_ref, dtype=np.float64), axis=1) <= h]
    if len(local) == 0:
        raise EmptyNeighborhood(f"no data within {h} of the reference point")
    D = data.shape[1]
    z = np.empty((0, D))
    while len(z) < n_mc:
        cand = math.sqrt(t) * rng.standard_normal((2 * (n_mc - len(z)) + 8, D))
        z = np.concatenate([z, cand[np.linalg.norm(cand, axis=1) <= h]])
    x = local[rng.integers(0, len(local), n_mc)] + z[:n_mc]
    d2, _ = kernels.nearest_sq(x, m_hat)
    se = float(d2.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0
    return DsmEstimate(float(d2.mean()), se, n_mc, t, d2)


# -- potential network ---------------------------------------------------------------

class PotentialNet:
    """eta(x) = 1/2 ||A tanh(W x + b) + c||^2 (+ optional fixed base potential).

    Gradients of the input-gradient with respect to the parameters are
    written out by hand (see ``backward``).
    """

    def __init__(self, dim, codim, width=64, rng=None, base: Potential | None = None, zero_init=False):
        rng = np.random.default_rng(0) if rng is None else rng
        bound = 1.0 / math.sqrt(dim)
        self.params = {
            "W": rng.uniform(-bound, bound, (width, dim)) * 2.0,
            "b": rng.uniform(-1.0, 1.0, width),
            "A": np.zeros((codim, width)) if zero_init else rng.uniform(-1, 1, (codim, width)) / math.sqrt(width),
            "c": np.zeros(codim),
        }
        self.base = base
        self.dim = dim

    def _fwd(self, x):
        P = self.params
        z = x @ P["W"].T + P["b"]
        hh = np.tanh(z)
        s = 1.0 - hh * hh
        F = hh @ P["A"].T + P["c"]
        u = F @ P["A"]
        q = s * u
        return hh, s, F, u, q

    def eta(self, x):
        x = _rows(x)
        _, _, F, _, _ = self._fwd(x)
        out = 0.5 * np.sum(F * F, axis=1)
        return out + self.base.eta(x) if self.base is not None else out

    def grad(self, x):
        x = _rows(x)
        q = self._fwd(x)[4]
        out = q @ self.params["W"]
        return out + self.base.grad(x) if self.base is not None else out

    def backward(self, x, G, e):
        """Parameter gradients of sum_n <G_n, grad eta(x_n)> + e_n eta(x_n)."""
        P = self.params
        x = _rows(x)
        hh, s, F, u, q = self._fwd(x)
        v = G @ P["W"].T
        dW = q.T @ G
        dq = v
        ds = dq * u
        du = dq * s
        dF = du @ P["A"].T + e[:, None] * F
        dA = F.T @ du
        dhh = -2.0 * hh * ds + dF @ P["A"]
        dA += dF.T @ hh
        dc = dF.sum(axis=0)
        dz = dhh * s
        dW += dz.T @ x
        db = dz.sum(axis=0)
        return {"W": dW, "b": db, "A": dA, "c": dc}

    def as_potential(self, domain=None):
        return Potential(self.eta, self.grad, domain)


@dataclass
class PotentialTrainConfig:
    width: int = 64
    steps: int = 2000
    lr: float = 3e-3
    batch: int = 256
    t: float = 1e-2
    lam_eik: float = 1.0
    lam_anc: float = 1.0
    reach: float = 1.0
    seed: int = 0
    zero_init: bool = False


def potential_loss_and_grad(net: PotentialNet, x0, x, eik_pts, anchors, lam_eik, lam_anc):
    """LDSM term ||grad eta(x) - (x - x0)||^2 plus eikonal and anchor penalties."""
    n = len(x)
    r = net.grad(x) - (x - x0)
    loss = float(np.sum(r * r) / n)
    g = net.backward(x, 2.0 * r / n, np.zeros(n))
    parts = {"ldsm": loss}
    if lam_eik:
        ge = net.grad(eik_pts)
        res = np.sum(ge * ge, axis=1) - 2.0 * net.eta(eik_pts)
        m = len(eik_pts)
        parts["eikonal"] = float(np.mean(res * res))
        coef = lam_eik * 2.0 * res / m
        g2 = net.backward(eik_pts, coef[:, None] * 2.0 * ge, -2.0 * coef)
        for k in g:
            g[k] += g2[k]
        loss += lam_eik * parts["eikonal"]
    if lam_anc:
        ea = net.eta(anchors)
        parts["anchor"] = float(np.mean(ea * ea))
        g3 = net.backward(anchors, np.zeros_like(anchors), lam_anc * 2.0 * ea / len(anchors))
        for k in g:
            g[k] += g3[k]
        loss += lam_anc * parts["anchor"]
    return loss, g, parts


def train_potential_score(data, anchors, config: PotentialTrainConfig, codim, base: Potential | None = None,
                          return_net=False):
    """Fit a potential network; returns the projection-class score ``-grad eta / t``."""
    data = _rows(data)
    anchors = _rows(anchors)
    rng = np.random.default_rng(config.seed)
    D = data.shape[1]
    net = PotentialNet(D, codim, config.width, rng, base=base, zero_init=config.zero_init)
    domain = Domain(anchors, config.reach / 2)
    opt = OptimState(lr=config.lr, weight_decay=0.0, warmup=min(100, max(1, config.steps // 10)))
    trace = []
    for _ in range(config.steps):
        x0 = data[rng.integers(0, len(data), config.batch)]
        x = x0 + math.sqrt(config.t) * rng.standard_normal(x0.shape)
        eik = domain.sample(rng, config.batch)
        loss, g, parts = potential_loss_and_grad(net, x0, x, eik, anchors, config.lam_eik, config.lam_anc)
        adamw_step(net.params, g, opt)
        trace.append(loss)
    pot = net.as_potential(domain)
    field = pot.score_field(D)
    field.trace = trace
    if return_net:
        return field, net
    return field
