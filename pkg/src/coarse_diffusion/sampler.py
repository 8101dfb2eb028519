"""Noise schedules and sampling dynamics.

Score fields are any callable ``field(x, t) -> (n, D)`` with a ``dim``
attribute. Time runs backward in every sampler: from T to t0 for the
reverse SDE, from t0 to tau for the probability-flow ODE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteState, OutOfRange


@dataclass(frozen=True)
class NoiseSchedule:
    """``ve``: x_t = x0 + sqrt(t) eps.  ``vp``: linear beta(t) on [0, 1]."""

    kind: str = "ve"
    beta_min: float = 0.1
    beta_max: float = 20.0
    t_min: float = 0.0
    t_max: float = math.inf

    def __post_init__(self):
        if self.kind not in ("ve", "vp"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "vp" and self.t_max > 1.0:
            object.__setattr__(self, "t_max", 1.0)

    @classmethod
    def vp(cls, beta_max=20.0, t_min=1e-3, beta_min=0.1):
        return cls("vp", beta_min, beta_max, t_min, 1.0)

    @classmethod
    def ve(cls, t_min=0.0, t_max=math.inf):
        return cls("ve", t_min=t_min, t_max=t_max)

    def _check(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t <= 0) or np.any(t < self.t_min * (1 - 1e-12)) or np.any(t > self.t_max * (1 + 1e-12)):
            raise OutOfRange(f"t outside [{self.t_min}, {self.t_max}] (or nonpositive)")
        return t

    def beta(self, t):
        t = self._check(t)
        if self.kind == "ve":
            return np.ones_like(t)
        return self.beta_min + (self.beta_max - self.beta_min) * t

    def int_beta(self, t):
        t = self._check(t)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t**2

    def alpha(self, t):
        t = self._check(t)
        if self.kind == "ve":
            return np.ones_like(t)
        return np.exp(-0.5 * self.int_beta(t))

    def var(self, t):
        t = self._check(t)
        if self.kind == "ve":
            return t
        return -np.expm1(-self.int_beta(t))

    def sigma(self, t):
        return np.sqrt(self.var(t))

    def alpha_bar(self, t):
        return self.alpha(t) ** 2

    def log_snr(self, t):
        t = self._check(t)
        if self.kind == "ve":
            return -np.log(t)
        ib = self.int_beta(t)
        return -ib - np.log(-np.expm1(-ib))

    def eval(self, t):
        return self.alpha(t), self.sigma(t), self.alpha_bar(t), self.var(t), self.log_snr(t)

    def to_config(self):
        return {"kind": self.kind, "beta_min": self.beta_min, "beta_max": self.beta_max,
                "t_min": self.t_min, "t_max": self.t_max}


def schedule_eval(schedule: NoiseSchedule, t):
    """Return ``(alpha, sigma, alpha_bar, Var, logSNR)``."""
    return schedule.eval(t)


VE = NoiseSchedule()


@dataclass(frozen=True)
class SamplerConfig:
    T: float = 10.0
    t0: float = 0.25
    tau: float = 1e-3
    n_sde_steps: int = 1000
    n_ode_steps: int = 256
    ode_method: str = "heun"
    langevin_levels: int = 16
    langevin_steps: int = 60
    langevin_c: float = 0.05
    langevin_t_max: float = 1.0
    langevin_t_min: float = 1e-3
    schedule: NoiseSchedule = VE

    def __post_init__(self):
        if not self.T > self.t0 > self.tau > 0:
            raise ConfigError(f"need T > t0 > tau > 0, got {self.T}, {self.t0}, {self.tau}")
        if min(self.n_sde_steps, self.n_ode_steps) < 1:
            raise ConfigError("step counts must be >= 1")
        if self.ode_method not in ("heun", "rk4"):
            raise ConfigError(f"unknown ODE method {self.ode_method!r}")


def _finite(x, where):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"non-finite state in {where}")


def reverse_sde_run(field, x_T, T, t0, n_steps, rng, schedule: NoiseSchedule = VE):
    """Euler-Maruyama on the reverse-time SDE over a uniform grid from T to t0."""
    x = np.array(x_T, dtype=np.float64, ndmin=2)
    h = (T - t0) / n_steps
    t = T
    for _ in range(n_steps):
        s = field(x, t)
        xi = rng.standard_normal(x.shape)
        if schedule.kind == "ve":
            x = x + h * s + math.sqrt(h) * xi
        else:
            b = float(schedule.beta(t))
            x = x + h * (0.5 * b * x + b * s) + math.sqrt(b * h) * xi
        t -= h
        _finite(x, "reverse SDE")
    return x


def _ode_rhs(field, schedule):
    # d/du with u = log t
    if schedule.kind == "ve":
        def f(x, u):
            t = math.exp(u)
            return -0.5 * t * field(x, t)
    else:
        def f(x, u):
            t = math.exp(u)
            return -0.5 * t * float(schedule.beta(t)) * (x + field(x, t))
    return f


def pf_ode_run(field, x, t0, tau, n_steps, method="heun", schedule: NoiseSchedule = VE):
    """Probability-flow ODE from t0 down to tau on a grid uniform in log t.

    This is the flow map used as the projection surrogate.
    """
    x = np.array(x, dtype=np.float64, ndmin=2)
    f = _ode_rhs(field, schedule)
    u0, u1 = math.log(t0), math.log(tau)
    h = (u1 - u0) / n_steps
    for i in range(n_steps):
        u = u0 + i * h
        if method == "heun":
            k1 = f(x, u)
            k2 = f(x + h * k1, u + h)
            x = x + 0.5 * h * (k1 + k2)
        elif method == "rk4":
            k1 = f(x, u)
            k2 = f(x + 0.5 * h * k1, u + 0.5 * h)
            k3 = f(x + 0.5 * h * k2, u + 0.5 * h)
            k4 = f(x + h * k3, u + h)
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            raise ConfigError(f"unknown ODE method {method!r}")
        _finite(x, "probability-flow ODE")
    return x


def hybrid_sample(field, n, config: SamplerConfig, rng):
    """Reverse SDE from T to t0, then the probability-flow ODE from t0 to tau."""
    if n == 0:
        return np.zeros((0, field.dim))
    sch = config.schedule
    scale = math.sqrt(config.T) if sch.kind == "ve" else 1.0
    x = scale * rng.standard_normal((n, field.dim))
    x = reverse_sde_run(field, x, config.T, config.t0, config.n_sde_steps, rng, sch)
    return pf_ode_run(field, x, config.t0, config.tau, config.n_ode_steps, config.ode_method, sch)


def langevin_levels(levels, t_max=1.0, t_min=1e-3):
    return np.linspace(t_max, t_min, levels)


def annealed_langevin(field, n, rng, levels=16, steps_per_level=60, t_max=1.0, t_min=1e-3,
                      c=0.05, x_init=None, schedule: NoiseSchedule = VE, project=None):
    """Annealed Langevin over linearly spaced levels with step size ``c * t``.

    ``project`` (e.g. ``SpecialOrthogonal.project``) is applied to the final
    state only, for evaluation.
    """
    if x_init is None:
        scale = math.sqrt(t_max) if schedule.kind == "ve" else 1.0
        x = scale * rng.standard_normal((n, field.dim))
    else:
        x = np.array(x_init, dtype=np.float64, ndmin=2)
    for t in langevin_levels(levels, t_max, t_min):
        eta = c * t
        for _ in range(steps_per_level):
            x = x + eta * field(x, t) + math.sqrt(2.0 * eta) * rng.standard_normal(x.shape)
        _finite(x, "annealed Langevin")
    if project is not None and len(x):
        x = project(x)
    return x
