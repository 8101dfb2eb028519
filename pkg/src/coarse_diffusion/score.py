"""Score fields, denoising score matching and related diagnostics.

A score field is called as ``field(x, t)`` with ``x`` of shape ``(n, D)``
(or ``(D,)``) and returns an array of the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DegenerateVector, EmptyNeighborhood
from .geometry import Manifold
from .measures import SmoothedMixture
from .sampler import VE, NoiseSchedule


def _rows(x):
    x = np.asarray(x, dtype=np.float64)
    return np.atleast_2d(x), x.ndim == 1


class ScoreField:
    kind = "base"
    dim: int
    t_range = (0.0, math.inf)

    def __call__(self, x, t):
        x, single = _rows(x)
        out = self._eval(x, float(t))
        return out[0] if single else out

    def _eval(self, x, t):
        raise NotImplementedError

    def describe(self):
        return {"kind": self.kind, "dim": self.dim}


class OracleMixture(ScoreField):
    """Exact score of ``sum_i w_i N(alpha a_i, sigma^2 I)`` at each time."""

    kind = "oracle_mixture"

    def __init__(self, atoms, weights=None, schedule: NoiseSchedule = VE):
        self.atoms = np.atleast_2d(np.asarray(atoms, dtype=np.float64))
        n = len(self.atoms)
        self.weights = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
        self.schedule = schedule
        self.dim = self.atoms.shape[1]

    def mixture(self, t):
        if self.schedule.kind == "ve":
            return SmoothedMixture(self.atoms, self.weights, t)
        a = float(self.schedule.alpha(t))
        return SmoothedMixture(a * self.atoms, self.weights, float(self.schedule.var(t)))

    def _eval(self, x, t):
        return self.mixture(t).score(x)

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "n_atoms": len(self.atoms)}


class ProjectionClass(ScoreField):
    """``s(x, t) = -grad eta(x) / t`` on the domain, zero outside it."""

    kind = "projection_class"

    def __init__(self, grad_eta, dim, domain=None, eta=None, manifold=None):
        self.grad_eta = grad_eta
        self.domain = domain
        self.eta = eta
        self.dim = dim
        self.manifold = manifold

    @classmethod
    def exact(cls, m: Manifold, radius=None):
        """Exact projection score: ``grad eta* = x - proj(x)`` on the tube of ``radius``."""
        radius = m.reach if radius is None else radius

        def domain(x):
            return np.asarray(m.dist(x)) < radius

        def grad(x):
            return x - m.project(x)

        return cls(grad, m.D, domain, eta=m.eta_star, manifold=m)

    def _eval(self, x, t):
        out = np.zeros_like(x)
        mask = np.ones(len(x), dtype=bool) if self.domain is None else self.domain(x)
        if np.any(mask):
            out[mask] = -self.grad_eta(x[mask]) / t
        return out


class Learned(ScoreField):
    kind = "learned"

    def __init__(self, net, schedule: NoiseSchedule):
        self.net = net
        self.schedule = schedule
        self.dim = net.input_dim
        self.t_range = (schedule.t_min, schedule.t_max)

    def _eval(self, x, t):
        return self.net.forward(x, np.full(len(x), t), self.schedule)


class Perturbed(ScoreField):
    """``s = base + e(x, t) / t`` with ``sup ||e|| = epsilon``."""

    kind = "perturbed"

    def __init__(self, base, error, epsilon, error_kind):
        self.base = base
        self.error = error
        self.epsilon = float(epsilon)
        self.error_kind = error_kind
        self.dim = base.dim

    def _eval(self, x, t):
        return self.base(x, t) + self.error(x, t) / t

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "epsilon": self.epsilon,
                "error_kind": self.error_kind, "base": self.base.describe()}


class LocalMixtureScore(ScoreField):
    """Score of an arbitrary ``SmoothedMixture`` factory ``t -> mixture``."""

    kind = "mixture_factory"

    def __init__(self, factory, dim):
        self.factory = factory
        self.dim = dim

    def _eval(self, x, t):
        return self.factory(t).score(x)


# -- perturbations ------------------------------------------------------------

ERROR_KINDS = ("constant-direction", "tangential", "random-smooth", "normal")


def _smooth_amplitude(rng, dim, n_terms=6, freq=2.0):
    omega = freq * rng.standard_normal((n_terms, dim))
    phase = rng.uniform(0, 2 * math.pi, n_terms)
    coef = rng.standard_normal(n_terms)
    coef /= np.abs(coef).sum()

    def amp(y):
        return np.sin(y @ omega.T + phase) @ coef

    return amp


def make_perturbed(base: ScoreField, epsilon, error_kind, rng, manifold: Manifold | None = None,
                   normal_amplitude=True):
    """Add a time-independent error field ``e`` with ``sup ||e|| = epsilon``.

    Kinds: ``constant-direction`` (e = eps u), ``tangential`` (eps times the
    first tangent basis vector at proj(x)), ``random-smooth`` (a random sum of
    sinusoids squashed radially by tanh), ``normal`` (eps a(proj x) times the
    outward normal with a random smooth amplitude |a| <= 1, or a = 1).
    """
    if error_kind not in ERROR_KINDS:
        raise ValueError(f"unknown error kind {error_kind!r}; choose from {ERROR_KINDS}")
    eps = float(epsilon)
    D = base.dim
    if manifold is None:
        manifold = getattr(base, "manifold", None)

    if error_kind == "constant-direction":
        u = rng.standard_normal(D)
        u /= np.linalg.norm(u)

        def err(x, t):
            return np.broadcast_to(eps * u, x.shape).copy()

    elif error_kind == "tangential":
        if manifold is None:
            raise ValueError("tangential errors need a manifold")

        def err(x, t):
            tb = np.asarray(manifold.tangent_basis(manifold.project(x))).reshape(len(x), D, manifold.k)
            return eps * tb[:, :, 0]

    elif error_kind == "random-smooth":
        n_terms = 8
        omega = 1.5 * rng.standard_normal((n_terms, D))
        phase = rng.uniform(0, 2 * math.pi, n_terms)
        amps = 3.0 * rng.standard_normal((n_terms, D))

        def err(x, t):
            v = np.sin(x @ omega.T + phase) @ amps
            r = np.linalg.norm(v, axis=1, keepdims=True)
            # tanh(r)/r is smooth and even in r; fall back to 1 near r = 0
            scale = np.where(r > 1e-8, np.tanh(r) / np.maximum(r, 1e-300), 1.0)
            return eps * scale * v

    else:
        if manifold is None:
            raise ValueError("normal errors need a manifold")
        amp = _smooth_amplitude(rng, D) if normal_amplitude else (lambda y: np.ones(len(y)))

        def err(x, t):
            y = manifold.project(x)
            return eps * amp(y)[:, None] * manifold.outward_normal(y)

    return Perturbed(base, err, eps, error_kind)


# -- objectives ---------------------------------------------------------------

def conditional_score(x, x0, t):
    return -(np.asarray(x, dtype=np.float64) - np.asarray(x0, dtype=np.float64)) / t


@dataclass
class DsmEstimate:
    value: float
    std_error: float
    n_mc: int
    t: float
    terms: np.ndarray = dc_field(default=None, repr=False)


@dataclass
class DsmDraws:
    """Common random numbers for paired DSM comparisons."""

    x0: np.ndarray
    x: np.ndarray
    t: float
    mass: float = 1.0


def _weights(data, weights):
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if weights is None:
        weights = np.full(len(data), 1.0 / len(data))
    return data, np.asarray(weights, dtype=np.float64)


def draw_dsm(data, t, n_mc, rng, weights=None, mass=1.0):
    data, w = _weights(data, weights)
    idx = rng.choice(len(data), size=n_mc, p=w / w.sum())
    x0 = data[idx]
    return DsmDraws(x0, x0 + math.sqrt(t) * rng.standard_normal(x0.shape), t, mass)


def dsm_terms(field, draws: DsmDraws):
    s = field(draws.x, draws.t)
    return draws.mass * np.sum((s + (draws.x - draws.x0) / draws.t) ** 2, axis=1)


def _dsm_estimate(terms, t):
    n = len(terms)
    se = float(terms.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return DsmEstimate(float(terms.mean()), se, n, t, terms)


def dsm(field, data, t, n_mc, rng=None, weights=None, draws: DsmDraws | None = None):
    """MC estimate of E ||s(x, t) + (x - x0)/t||^2 with x0 ~ data, x ~ N(x0, tI)."""
    if draws is None:
        draws = draw_dsm(data, t, n_mc, rng, weights)
    return _dsm_estimate(dsm_terms(field, draws), t)


def local_draws(x_ref, h, data, t, n_mc, rng, weights=None):
    """Draws from the data measure restricted to B(x_ref, h), unnormalised."""
    data, w = _weights(data, weights)
    inside = np.linalg.norm(data - np.asarray(x_ref, dtype=np.float64), axis=1) <= h
    if not np.any(inside):
        raise EmptyNeighborhood(f"no data within {h} of the reference point")
    w_in = w[inside]
    mass = float(w_in.sum() / w.sum())
    return draw_dsm(data[inside], t, n_mc, rng, w_in, mass)


def ldsm(field, x_ref, h, data, t, n_mc, rng=None, weights=None, draws: DsmDraws | None = None):
    """DSM against the data measure restricted to the ball B(x_ref, h).

    The restriction is not renormalised, so ``h -> inf`` recovers ``dsm``.
    """
    if draws is None:
        draws = local_draws(x_ref, h, data, t, n_mc, rng, weights)
    return _dsm_estimate(dsm_terms(field, draws), t)


def local_oracle(x_ref, h, data, weights=None):
    """Minimiser of the local DSM: score of the smoothed restricted measure."""
    data, w = _weights(data, weights)
    inside = np.linalg.norm(data - np.asarray(x_ref, dtype=np.float64), axis=1) <= h
    if not np.any(inside):
        raise EmptyNeighborhood(f"no data within {h} of the reference point")
    w_in = w[inside] / w[inside].sum()
    return OracleMixture(data[inside], w_in)


def ldsm_excess(field, x_ref, h, data, t, n_mc, rng, weights=None):
    """LDSM(field) - min LDSM, with common random numbers."""
    draws = local_draws(x_ref, h, data, t, n_mc, rng, weights)
    best = local_oracle(x_ref, h, data, weights)
    diff = dsm_terms(field, draws) - dsm_terms(best, draws)
    return _dsm_estimate(diff, t)


@dataclass
class ExcessRisk:
    lhs: float
    rhs: float
    gap: float
    rel_gap: float
    lhs_se: float
    rhs_se: float


def excess_risk_check(s, s_star, mix: SmoothedMixture, n_mc, rng) -> ExcessRisk:
    """DSM(s) - DSM(s*) against E_{mu_t} ||s - s*||^2 on shared draws.

    ``mix`` is the smoothed data law; its atoms and weights define the DSM
    data measure and its variance is the noise level t.
    """
    draws = draw_dsm(mix.atoms, mix.t, n_mc, rng, mix.weights)
    d = dsm_terms(s, draws) - dsm_terms(s_star, draws)
    r = np.sum((s(draws.x, mix.t) - s_star(draws.x, mix.t)) ** 2, axis=1)
    lhs, rhs = float(d.mean()), float(r.mean())
    gap = lhs - rhs
    rel = abs(gap) / max(abs(rhs), 1e-300)
    return ExcessRisk(lhs, rhs, gap, rel, float(d.std(ddof=1) / math.sqrt(n_mc)),
                      float(r.std(ddof=1) / math.sqrt(n_mc)))


# -- maps and metrics ---------------------------------------------------------

def denoiser(field, x, t):
    x = np.asarray(x, dtype=np.float64)
    return x + t * field(x, t)


def alignment(field, m: Manifold, x, t):
    """Cosine between ``proj(x) - x`` and ``s(x, t)``."""
    x, single = _rows(x)
    a = m.project(x) - x
    b = field(x, t)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na < 1e-12) or np.any(nb < 1e-12):
        raise DegenerateVector("alignment undefined for a zero vector")
    cos = np.clip(np.sum(a * b, axis=1) / (na * nb), -1.0, 1.0)
    return cos[0] if single else cos
