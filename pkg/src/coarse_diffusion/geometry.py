"""Synthetic manifolds with exact nearest-point projection.

Every manifold accepts either a single point of shape ``(D,)`` or a batch of
shape ``(n, D)`` and returns arrays with the matching leading shape.

Built-ins
---------
Circle            radius r, plane spanned by the first two coordinates of R^D.
Sphere            k-sphere of radius r in the first k+1 coordinates of R^D.
CliffordTorus     product of circles (r1, r2) in the first four coordinates.
SpecialOrthogonal SO(d) flattened row-major into R^(d*d), Frobenius metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import BallTooLarge, NotOnManifold, OutsideTube, SingularInput

ON_MANIFOLD_TOL = 1e-9
_MEDIAL_TOL = 1e-12


def _batch(x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _unbatch(a, single):
    return a[0] if single else a


def _radial(p, r):
    """Radial projection of rows of ``p`` onto the sphere of radius ``r``."""
    rho = np.linalg.norm(p, axis=-1)
    if np.any(rho <= _MEDIAL_TOL * np.maximum(1.0, r)):
        raise OutsideTube("point on the medial set (centre axis); nearest point is not unique")
    return p * (r / rho)[:, None], rho


def _wrap(angle):
    return np.abs(np.arctan2(np.sin(angle), np.cos(angle)))


def sphere_area(m):
    """Surface area of the unit sphere S^(m-1) in R^m."""
    return 2.0 * math.pi ** (m / 2.0) / math.gamma(m / 2.0)


def unit_ball_volume(m):
    return math.pi ** (m / 2.0) / math.gamma(m / 2.0 + 1.0)


@dataclass(frozen=True)
class SurfaceDensity:
    """On-manifold density (w.r.t. Riemannian volume).

    kind is one of ``uniform`` (Haar on SO(d)), ``vonmises`` (Circle only,
    parameters ``kappa`` and ``mean_angle``) or ``projected_normal`` (SO(d),
    parameter ``sigma``).
    """

    kind: str = "uniform"
    kappa: float = 0.0
    mean_angle: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "vonmises", "projected_normal"):
            raise ValueError(f"unknown density kind {self.kind!r}")

    @property
    def is_uniform(self):
        return self.kind == "uniform"

    def pdf(self, m, y):
        """Density at on-manifold points, where available in closed form."""
        y, single = _batch(y)
        if self.kind == "uniform":
            out = np.full(len(y), 1.0 / m.volume)
        elif self.kind == "vonmises":
            if not isinstance(m, Circle):
                raise ValueError("von Mises density is defined on the Circle only")
            theta = np.arctan2(y[:, 1], y[:, 0])
            norm = 2.0 * math.pi * special.i0(self.kappa) * m.radius
            out = np.exp(self.kappa * np.cos(theta - self.mean_angle)) / norm
        else:
            raise NotImplementedError("projected-normal density has no closed form here")
        return _unbatch(out, single)

    def bounds(self, m, rng=None, n_mc=200_000):
        """Return ``(p_min, p_max)``; analytic where possible, else Monte Carlo."""
        if self.kind == "uniform":
            p = 1.0 / m.volume
            return p, p
        if self.kind == "vonmises":
            norm = 2.0 * math.pi * special.i0(self.kappa) * m.radius
            return math.exp(-self.kappa) / norm, math.exp(self.kappa) / norm
        return _projected_normal_bounds(m, self, rng, n_mc)


def _projected_normal_bounds(m, density, rng, n_mc, bins=24):
    # Compare the law of d(I, R) under the density with its Haar law; the
    # projected normal around I is conjugation invariant, so for SO(3) the
    # density depends on the rotation angle only.
    rng = np.random.default_rng(0) if rng is None else rng
    eye = np.eye(m.d).ravel()
    r_pn = m.geodesic_distance(np.broadcast_to(eye, (n_mc, m.D)), sample_surface(m, density, rng, n_mc))
    r_h = m.geodesic_distance(np.broadcast_to(eye, (n_mc, m.D)), sample_surface(m, SurfaceDensity(), rng, n_mc))
    edges = np.linspace(0.0, m.injectivity_radius, bins + 1)
    h_pn, _ = np.histogram(r_pn, edges)
    h_h, _ = np.histogram(r_h, edges)
    ok = h_h >= 50
    ratio = h_pn[ok] / h_h[ok]
    p = ratio / m.volume
    return max(float(p.min()), 1e-12), float(p.max())


@dataclass(frozen=True)
class Manifold:
    """Base class; subclasses fill in the geometry."""

    kind: str = field(init=False, default="")

    # -- interface -------------------------------------------------------
    k: int = field(init=False, default=0)
    D: int = field(init=False, default=0)
    beta: float = field(init=False, default=math.inf)

    @property
    def reach(self) -> float:
        raise NotImplementedError

    @property
    def volume(self) -> float:
        raise NotImplementedError

    @property
    def injectivity_radius(self) -> float:
        raise NotImplementedError

    def project(self, x):
        raise NotImplementedError

    def dist(self, x):
        x, single = _batch(x)
        return _unbatch(np.linalg.norm(x - _batch(self.project(x))[0], axis=1), single)

    def eta_star(self, x):
        return 0.5 * np.asarray(self.dist(x)) ** 2

    def geodesic_distance(self, y1, y2):
        raise NotImplementedError

    def tangent_basis(self, y):
        raise NotImplementedError

    def ball_volume(self, delta):
        raise NotImplementedError

    def sample_uniform(self, rng, n):
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    # -- shared helpers --------------------------------------------------
    def ensure_on(self, y, tol=ON_MANIFOLD_TOL):
        """Re-project points within ``tol`` of the manifold, reject the rest."""
        y, single = _batch(y)
        proj = _batch(self.project(y))[0]
        gap = np.linalg.norm(y - proj, axis=1)
        if np.any(gap > tol):
            raise NotOnManifold(f"point is {gap.max():.3e} away from the manifold (tol {tol:g})")
        return _unbatch(proj, single)

    def outward_normal(self, y):
        raise NotImplementedError(f"no canonical normal field on {type(self).__name__}")

    def normal_basis(self, y):
        """Orthonormal basis of the normal space, shape (D, D-k) or (n, D, D-k)."""
        y, single = _batch(y)
        tb = np.asarray(self.tangent_basis(y)).reshape(len(y), self.D, self.k)
        eye = np.broadcast_to(np.eye(self.D), (len(y), self.D, self.D))
        q, _ = np.linalg.qr(np.concatenate([tb, eye], axis=2))
        return _unbatch(q[:, :, self.k:self.D], single)

    def sample_tube(self, rng, n, radius):
        """Points ``y + r u`` with ``y`` uniform, ``u`` a unit normal and ``r < radius``.

        The radius is uniform in the normal ball, so ``project`` returns ``y``
        whenever ``radius`` is below the reach.
        """
        y = self.sample_uniform(rng, n)
        nb = self.normal_basis(y).reshape(n, self.D, self.D - self.k)
        g = rng.standard_normal((n, self.D - self.k))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = radius * rng.random(n) ** (1.0 / (self.D - self.k))
        return y + r[:, None] * np.einsum("nij,nj->ni", nb, g), y


def _pad(D, need, name):
    if D < need:
        raise ValueError(f"{name} needs ambient dimension >= {need}, got {D}")


@dataclass(frozen=True)
class Circle(Manifold):
    radius: float = 1.0
    ambient_dim: int = 2

    def __post_init__(self):
        _pad(self.ambient_dim, 2, "Circle")
        object.__setattr__(self, "kind", "circle")
        object.__setattr__(self, "k", 1)
        object.__setattr__(self, "D", int(self.ambient_dim))

    @property
    def reach(self):
        return float(self.radius)

    @property
    def volume(self):
        return 2.0 * math.pi * self.radius

    @property
    def injectivity_radius(self):
        return math.pi * self.radius

    def project(self, x):
        x, single = _batch(x)
        y = np.zeros_like(x)
        y[:, :2], _ = _radial(x[:, :2], self.radius)
        return _unbatch(y, single)

    def dist(self, x):
        x, single = _batch(x)
        rho = np.linalg.norm(x[:, :2], axis=1)
        rest = np.sum(x[:, 2:] ** 2, axis=1)
        return _unbatch(np.sqrt((rho - self.radius) ** 2 + rest), single)

    def angle(self, y):
        y, single = _batch(y)
        return _unbatch(np.arctan2(y[:, 1], y[:, 0]), single)

    def from_angle(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        y = np.zeros((len(theta), self.D))
        y[:, 0] = self.radius * np.cos(theta)
        y[:, 1] = self.radius * np.sin(theta)
        return y

    def geodesic_distance(self, y1, y2):
        y1, s1 = _batch(self.ensure_on(y1))
        y2, s2 = _batch(self.ensure_on(y2))
        cross = y1[:, 0] * y2[:, 1] - y1[:, 1] * y2[:, 0]
        dot = y1[:, 0] * y2[:, 0] + y1[:, 1] * y2[:, 1]
        return _unbatch(self.radius * np.abs(np.arctan2(cross, dot)), s1 and s2)

    def tangent_basis(self, y):
        y, single = _batch(self.ensure_on(y))
        t = np.zeros((len(y), self.D, 1))
        t[:, 0, 0] = -y[:, 1] / self.radius
        t[:, 1, 0] = y[:, 0] / self.radius
        return _unbatch(t, single)

    def outward_normal(self, y):
        y, single = _batch(self.ensure_on(y))
        out = np.zeros_like(y)
        out[:, :2] = y[:, :2] / self.radius
        return _unbatch(out, single)

    def ball_volume(self, delta):
        if delta > self.injectivity_radius:
            raise BallTooLarge(f"delta={delta} exceeds the injectivity radius {self.injectivity_radius}")
        return 2.0 * delta

    def sample_uniform(self, rng, n):
        return self.from_angle(rng.uniform(0.0, 2.0 * math.pi, n))

    def to_config(self):
        return {"kind": "circle", "radius": self.radius, "ambient_dim": self.D}


@dataclass(frozen=True)
class Sphere(Manifold):
    intrinsic_dim: int = 2
    radius: float = 1.0
    ambient_dim: int | None = None

    def __post_init__(self):
        D = self.intrinsic_dim + 1 if self.ambient_dim is None else int(self.ambient_dim)
        _pad(D, self.intrinsic_dim + 1, "Sphere")
        object.__setattr__(self, "kind", "sphere")
        object.__setattr__(self, "k", int(self.intrinsic_dim))
        object.__setattr__(self, "D", D)

    @property
    def reach(self):
        return float(self.radius)

    @property
    def volume(self):
        return sphere_area(self.k + 1) * self.radius**self.k

    @property
    def injectivity_radius(self):
        return math.pi * self.radius

    def project(self, x):
        x, single = _batch(x)
        m = self.k + 1
        y = np.zeros_like(x)
        y[:, :m], _ = _radial(x[:, :m], self.radius)
        return _unbatch(y, single)

    def dist(self, x):
        x, single = _batch(x)
        m = self.k + 1
        rho = np.linalg.norm(x[:, :m], axis=1)
        return _unbatch(np.sqrt((rho - self.radius) ** 2 + np.sum(x[:, m:] ** 2, axis=1)), single)

    def geodesic_distance(self, y1, y2):
        y1, s1 = _batch(self.ensure_on(y1))
        y2, s2 = _batch(self.ensure_on(y2))
        chord = np.linalg.norm(y1 - y2, axis=1)
        ratio = np.clip(chord / (2.0 * self.radius), 0.0, 1.0)
        return _unbatch(2.0 * self.radius * np.arcsin(ratio), s1 and s2)

    def tangent_basis(self, y):
        y, single = _batch(self.ensure_on(y))
        m = self.k + 1
        n = len(y)
        stack = np.concatenate(
            [y[:, :m, None] / self.radius, np.broadcast_to(np.eye(m), (n, m, m))], axis=2
        )
        q, _ = np.linalg.qr(stack)
        basis = q[:, :, 1:m]
        # deterministic orientation: largest-magnitude entry of each column positive
        idx = np.argmax(np.abs(basis), axis=1)
        signs = np.sign(np.take_along_axis(basis, idx[:, None, :], axis=1))
        basis = basis * signs
        out = np.zeros((n, self.D, self.k))
        out[:, :m, :] = basis
        return _unbatch(out, single)

    def outward_normal(self, y):
        y, single = _batch(self.ensure_on(y))
        out = np.zeros_like(y)
        out[:, : self.k + 1] = y[:, : self.k + 1] / self.radius
        return _unbatch(out, single)

    def ball_volume(self, delta):
        if delta > self.injectivity_radius + 1e-12:
            raise BallTooLarge(f"delta={delta} exceeds the injectivity radius {self.injectivity_radius}")
        r, k = self.radius, self.k
        if k == 1:
            return 2.0 * delta
        if k == 2:
            return 2.0 * math.pi * r**2 * (1.0 - math.cos(delta / r))
        val, _ = integrate.quad(lambda th: math.sin(th) ** (k - 1), 0.0, delta / r)
        return sphere_area(k) * r**k * val

    def sample_uniform(self, rng, n):
        g = rng.standard_normal((n, self.k + 1))
        out = np.zeros((n, self.D))
        out[:, : self.k + 1] = self.radius * g / np.linalg.norm(g, axis=1, keepdims=True)
        return out

    def to_config(self):
        return {"kind": "sphere", "intrinsic_dim": self.k, "radius": self.radius, "ambient_dim": self.D}


@dataclass(frozen=True)
class CliffordTorus(Manifold):
    r1: float = 1.0
    r2: float = 1.0
    ambient_dim: int = 4

    def __post_init__(self):
        _pad(self.ambient_dim, 4, "CliffordTorus")
        object.__setattr__(self, "kind", "torus")
        object.__setattr__(self, "k", 2)
        object.__setattr__(self, "D", int(self.ambient_dim))

    @property
    def reach(self):
        return float(min(self.r1, self.r2))

    @property
    def volume(self):
        return 4.0 * math.pi**2 * self.r1 * self.r2

    @property
    def injectivity_radius(self):
        return math.pi * min(self.r1, self.r2)

    def project(self, x):
        x, single = _batch(x)
        y = np.zeros_like(x)
        y[:, 0:2], _ = _radial(x[:, 0:2], self.r1)
        y[:, 2:4], _ = _radial(x[:, 2:4], self.r2)
        return _unbatch(y, single)

    def dist(self, x):
        x, single = _batch(x)
        a = np.linalg.norm(x[:, 0:2], axis=1) - self.r1
        b = np.linalg.norm(x[:, 2:4], axis=1) - self.r2
        return _unbatch(np.sqrt(a**2 + b**2 + np.sum(x[:, 4:] ** 2, axis=1)), single)

    def angles(self, y):
        y, single = _batch(y)
        a = np.stack([np.arctan2(y[:, 1], y[:, 0]), np.arctan2(y[:, 3], y[:, 2])], axis=1)
        return _unbatch(a, single)

    def from_angles(self, a, b):
        a = np.atleast_1d(a)
        b = np.atleast_1d(b)
        y = np.zeros((len(a), self.D))
        y[:, 0], y[:, 1] = self.r1 * np.cos(a), self.r1 * np.sin(a)
        y[:, 2], y[:, 3] = self.r2 * np.cos(b), self.r2 * np.sin(b)
        return y

    def geodesic_distance(self, y1, y2):
        y1, s1 = _batch(self.ensure_on(y1))
        y2, s2 = _batch(self.ensure_on(y2))
        a1, a2 = self.angles(y1), self.angles(y2)
        da = _wrap(a1[:, 0] - a2[:, 0]) * self.r1
        db = _wrap(a1[:, 1] - a2[:, 1]) * self.r2
        return _unbatch(np.hypot(da, db), s1 and s2)

    def tangent_basis(self, y):
        y, single = _batch(self.ensure_on(y))
        t = np.zeros((len(y), self.D, 2))
        t[:, 0, 0], t[:, 1, 0] = -y[:, 1] / self.r1, y[:, 0] / self.r1
        t[:, 2, 1], t[:, 3, 1] = -y[:, 3] / self.r2, y[:, 2] / self.r2
        return _unbatch(t, single)

    def outward_normal(self, y):
        """Unit normal pointing away from the centre of the first factor circle."""
        y, single = _batch(self.ensure_on(y))
        out = np.zeros_like(y)
        out[:, 0:2] = y[:, 0:2] / self.r1
        return _unbatch(out, single)

    def ball_volume(self, delta):
        if delta > self.injectivity_radius:
            raise BallTooLarge(f"delta={delta} exceeds the injectivity radius {self.injectivity_radius}")
        # flat metric: a geodesic ball below the injectivity radius is a Euclidean disc
        return math.pi * delta**2

    def sample_uniform(self, rng, n):
        return self.from_angles(rng.uniform(0, 2 * math.pi, n), rng.uniform(0, 2 * math.pi, n))

    def to_config(self):
        return {"kind": "torus", "r1": self.r1, "r2": self.r2, "ambient_dim": self.D}


@dataclass(frozen=True)
class SpecialOrthogonal(Manifold):
    """SO(d) flattened to R^(d*d) with the Frobenius (embedding) metric.

    The reach is not known in closed form for this embedding; ``reach`` is a
    lower bound estimated once at construction by probing normal rays
    ``R (I + s S)`` for the first ``s`` at which the nearest rotation stops
    being ``R``, scaled by ``reach_safety``.
    """

    d: int = 3
    reach_probes: int = 128
    reach_safety: float = 0.7
    reach_seed: int = 0
    _reach: float = field(init=False, default=0.0, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("SO(d) needs d >= 2")
        object.__setattr__(self, "kind", "so")
        object.__setattr__(self, "k", self.d * (self.d - 1) // 2)
        object.__setattr__(self, "D", self.d * self.d)
        object.__setattr__(self, "_reach", self._probe_reach())

    reach_is_numeric = True

    @property
    def reach(self):
        return self._reach

    @property
    def volume(self):
        # Vol(SO(d)) under <A,B> = tr(A^T B)/2 is prod_{m=2..d} |S^(m-1)|; the
        # Frobenius metric scales lengths by sqrt(2).
        base = 1.0
        for m in range(2, self.d + 1):
            base *= sphere_area(m)
        return base * math.sqrt(2.0) ** self.k

    @property
    def injectivity_radius(self):
        return math.sqrt(2.0) * math.pi

    def _mats(self, x):
        x, single = _batch(x)
        if x.shape[1] != self.D:
            raise ValueError(f"expected points in R^{self.D}, got R^{x.shape[1]}")
        return x.reshape(-1, self.d, self.d), single

    def project(self, x):
        mats, single = self._mats(x)
        u, s, vt = np.linalg.svd(mats)
        scale = np.maximum(s[:, 0], 1.0)
        if np.any(s[:, -1] <= 1e-12 * scale):
            raise SingularInput("rank-deficient matrix has no unique nearest rotation")
        det = np.linalg.det(u @ vt)
        flip = det < 0
        if np.any(flip & (s[:, -1] >= s[:, -2] * (1.0 - 1e-12))):
            raise OutsideTube("det < 0 with repeated smallest singular value: nearest rotation not unique")
        u = u.copy()
        u[flip, :, -1] *= -1.0
        r = u @ vt
        return _unbatch(r.reshape(-1, self.D), single)

    def _rotation_angles(self, rel):
        lam = np.linalg.eigvals(rel)
        return np.abs(np.angle(lam))

    def geodesic_distance(self, y1, y2):
        m1, s1 = self._mats(self.ensure_on(y1))
        m2, s2 = self._mats(self.ensure_on(y2))
        rel = np.swapaxes(m1, 1, 2) @ m2
        ang = self._rotation_angles(rel)
        # ||log(R1^T R2)||_F^2 = sum over eigenvalues of angle^2
        return _unbatch(np.sqrt(np.sum(ang**2, axis=1)), s1 and s2)

    def tangent_basis(self, y):
        mats, single = self._mats(self.ensure_on(y))
        gens = []
        for i in range(self.d):
            for j in range(i + 1, self.d):
                e = np.zeros((self.d, self.d))
                e[i, j], e[j, i] = 1.0 / math.sqrt(2.0), -1.0 / math.sqrt(2.0)
                gens.append(e)
        gens = np.stack(gens)  # (k, d, d)
        basis = np.einsum("nab,kbc->nack", mats, gens).reshape(len(mats), self.D, self.k)
        return _unbatch(basis, single)

    def ball_volume(self, delta, n_mc=200_000):
        if delta > self.injectivity_radius:
            raise BallTooLarge(f"delta={delta} exceeds the injectivity radius {self.injectivity_radius}")
        if self.d == 2:
            return 2.0 * delta
        if self.d == 3:
            # Haar law of the rotation angle is (1 - cos th)/pi on [0, pi]; d = sqrt(2) th
            th = delta / math.sqrt(2.0)
            return self.volume * (th - math.sin(th)) / math.pi
        rng = np.random.default_rng(12345)
        eye = np.broadcast_to(np.eye(self.d).ravel(), (n_mc, self.D))
        r = self.geodesic_distance(eye, self.sample_uniform(rng, n_mc))
        return self.volume * float(np.mean(r <= delta))

    def sample_uniform(self, rng, n):
        g = rng.standard_normal((n, self.d, self.d))
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
        neg = np.linalg.det(q) < 0
        q[neg, :, 0] *= -1.0
        return q.reshape(n, self.D)

    def _probe_reach(self):
        rng = np.random.default_rng(self.reach_seed)
        rots = self.sample_uniform(rng, self.reach_probes).reshape(-1, self.d, self.d)
        fails = []
        for rot in rots:
            s = rng.standard_normal((self.d, self.d))
            s = 0.5 * (s + s.T)
            s /= np.linalg.norm(s)
            lo, hi = 0.0, 4.0
            if self._foot_is(rot, s, hi):
                fails.append(hi)
                continue
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if self._foot_is(rot, s, mid):
                    lo = mid
                else:
                    hi = mid
            fails.append(lo)
        return self.reach_safety * float(min(fails))

    def _foot_is(self, rot, sym, s):
        x = (rot @ (np.eye(self.d) + s * sym)).ravel()
        try:
            foot = self.project(x).reshape(self.d, self.d)
        except (SingularInput, OutsideTube):
            return False
        return np.linalg.norm(foot - rot) < 1e-9

    def to_config(self):
        return {"kind": "so", "d": self.d}


def manifold_from_config(cfg: dict) -> Manifold:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    if kind == "circle":
        return Circle(radius=float(cfg.get("radius", 1.0)), ambient_dim=int(cfg.get("ambient_dim", 2)))
    if kind == "sphere":
        amb = cfg.get("ambient_dim")
        return Sphere(
            intrinsic_dim=int(cfg.get("intrinsic_dim", 2)),
            radius=float(cfg.get("radius", 1.0)),
            ambient_dim=None if amb is None else int(amb),
        )
    if kind == "torus":
        return CliffordTorus(float(cfg.get("r1", 1.0)), float(cfg.get("r2", 1.0)), int(cfg.get("ambient_dim", 4)))
    if kind == "so":
        return SpecialOrthogonal(d=int(cfg.get("d", 3)))
    raise ValueError(f"unknown manifold kind {kind!r}")


# -- module-level operations -------------------------------------------------

def project(m: Manifold, x):
    return m.project(x)


def dist_to_manifold(m: Manifold, x):
    return m.dist(x)


def eta_star(m: Manifold, x):
    return m.eta_star(x)


def geodesic_distance(m: Manifold, y1, y2):
    return m.geodesic_distance(y1, y2)


def tangent_basis(m: Manifold, y):
    return m.tangent_basis(y)


def geodesic_ball_volume(m: Manifold, delta):
    return m.ball_volume(delta)


def sample_surface(m: Manifold, density: SurfaceDensity | None, rng, n):
    """Draw ``n`` i.i.d. points from ``density`` on ``m``."""
    density = density or SurfaceDensity()
    if n == 0:
        return np.zeros((0, m.D))
    if density.kind == "uniform":
        return m.sample_uniform(rng, n)
    if density.kind == "vonmises":
        if not isinstance(m, Circle):
            raise ValueError("von Mises density is defined on the Circle only")
        out = np.empty(0)
        while len(out) < n:
            th = rng.uniform(-math.pi, math.pi, 2 * (n - len(out)) + 16)
            keep = rng.random(len(th)) < np.exp(density.kappa * (np.cos(th - density.mean_angle) - 1.0))
            out = np.concatenate([out, th[keep]])
        return m.from_angle(out[:n])
    if density.kind == "projected_normal":
        if not isinstance(m, SpecialOrthogonal):
            raise ValueError("projected-normal density is defined on SO(d) only")
        g = np.eye(m.d)[None] + density.sigma * rng.standard_normal((n, m.d, m.d))
        return m.project(g.reshape(n, m.D))
    raise ValueError(density.kind)
