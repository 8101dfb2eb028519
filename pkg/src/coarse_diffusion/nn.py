"""Residual MLP score network with hand-written reverse mode, AdamW and
variance-weighted DSM training. Parameters are float64 by default; float32 is available for large nets.

Layout::

    temb = L_e2(silu(L_e1([sin, cos](f * logSNR(t)))))
    h    = L_in(x)
    h    = h + L2(LN2(silu(L1(LN1(h)) + Lt(temb))))      (per block)
    s    = L_out(h) / sigma(t)                            (L_out zero-init)
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import NonFiniteActivation
from .sampler import NoiseSchedule

LN_EPS = 1e-8


def silu(z):
    return z * expit(z)


def silu_grad(z):
    sg = expit(z)
    return sg * (1.0 + z * (1.0 - sg))


def layernorm_fwd(x, g, b):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc**2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layernorm_bwd(dy, g, cache):
    xhat, inv = cache
    dg = np.sum(dy * xhat, axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return dx, dg, db


def fourier_frequencies(schedule: NoiseSchedule, n_freqs):
    """Geometric frequencies whose lowest one turns less than half a period
    over the log-SNR range (so the embedding is injective) and whose highest
    resolves about ``n_freqs`` periods."""
    lo_t = schedule.t_min if schedule.t_min > 0 else 1e-5
    hi_t = min(schedule.t_max, 1.0 if schedule.kind == "vp" else 100.0)
    span = float(abs(schedule.log_snr(lo_t) - schedule.log_snr(hi_t)))
    span = max(span, 1.0)
    return np.geomspace(math.pi / span, 2.0 * math.pi * n_freqs / span, n_freqs)


def fourier_features(t, schedule: NoiseSchedule, freqs):
    lam = np.asarray(schedule.log_snr(np.atleast_1d(t)), dtype=np.float64)
    ang = lam[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class ScoreNet:
    def __init__(self, input_dim, hidden=64, n_blocks=2, time_embed_dim=128, n_freqs=16,
                 schedule: NoiseSchedule | None = None, rng=None, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.input_dim = int(input_dim)
        self.hidden = int(hidden)
        self.n_blocks = int(n_blocks)
        self.time_embed_dim = int(time_embed_dim)
        self.n_freqs = int(n_freqs)
        self.schedule = schedule or NoiseSchedule.vp()
        self.freqs = fourier_frequencies(self.schedule, self.n_freqs)
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = {}
        E, H, D = self.time_embed_dim, self.hidden, self.input_dim
        self._linear("e1", 2 * self.n_freqs, E, rng)
        self._linear("e2", E, E, rng)
        self._linear("in", D, H, rng)
        for b in range(self.n_blocks):
            p = f"b{b}."
            self.params[p + "ln1.g"] = np.ones(H)
            self.params[p + "ln1.b"] = np.zeros(H)
            self._linear(p + "l1", H, H, rng)
            self._linear(p + "lt", E, H, rng)
            self.params[p + "ln2.g"] = np.ones(H)
            self.params[p + "ln2.b"] = np.zeros(H)
            self._linear(p + "l2", H, H, rng)
        self.params["out.W"] = np.zeros((H, D))
        self.params["out.b"] = np.zeros(D)
        self.params = {k: v.astype(self.dtype) for k, v in self.params.items()}

    def _linear(self, name, fan_in, fan_out, rng):
        bound = 1.0 / math.sqrt(fan_in)
        self.params[name + ".W"] = rng.uniform(-bound, bound, (fan_in, fan_out))
        self.params[name + ".b"] = rng.uniform(-bound, bound, fan_out)

    def hyper(self):
        return {"input_dim": self.input_dim, "hidden": self.hidden, "n_blocks": self.n_blocks,
                "time_embed_dim": self.time_embed_dim, "n_freqs": self.n_freqs,
                "schedule": self.schedule.to_config(), "dtype": self.dtype.name}

    def n_params(self):
        return sum(v.size for v in self.params.values())

    # -- forward / backward ----------------------------------------------------
    def time_embedding(self, t, schedule=None):
        sch = schedule or self.schedule
        P = self.params
        f = fourier_features(t, sch, self.freqs).astype(self.dtype)
        z1 = f @ P["e1.W"] + P["e1.b"]
        a1 = silu(z1)
        return a1 @ P["e2.W"] + P["e2.b"], (f, z1, a1)

    def forward(self, x, t, schedule=None, cache=False):
        sch = schedule or self.schedule
        P = self.params
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(x),))
        if not cache and not np.any(P["out.W"]) and not np.any(P["out.b"]):
            # zero head (fresh network): the output is exactly zero
            return np.zeros_like(x)
        x = x.astype(self.dtype, copy=False)
        temb, ecache = self.time_embedding(t, sch)
        h = x @ P["in.W"] + P["in.b"]
        blocks = []
        for b in range(self.n_blocks):
            p = f"b{b}."
            a, c1 = layernorm_fwd(h, P[p + "ln1.g"], P[p + "ln1.b"])
            u = a @ P[p + "l1.W"] + P[p + "l1.b"] + temb @ P[p + "lt.W"] + P[p + "lt.b"]
            v = silu(u)
            w, c2 = layernorm_fwd(v, P[p + "ln2.g"], P[p + "ln2.b"])
            blocks.append((h, a, c1, u, w, c2))
            h = h + w @ P[p + "l2.W"] + P[p + "l2.b"]
        raw = h @ P["out.W"] + P["out.b"]
        sigma = np.asarray(sch.sigma(t)).astype(self.dtype)
        out = raw / sigma[:, None]
        if not np.all(np.isfinite(out)):
            raise NonFiniteActivation("non-finite network output")
        if cache:
            return out, (x, t, temb, ecache, blocks, h, sigma)
        return out.astype(np.float64, copy=False)

    def __call__(self, x, t, schedule=None):
        return self.forward(x, t, schedule)

    def backward(self, dout, fcache):
        """Gradients of sum(dout * output) with respect to every parameter."""
        x, t, temb, (f, z1, a1), blocks, h, sigma = fcache
        P = self.params
        g = {}
        draw = dout / sigma[:, None]
        g["out.W"] = h.T @ draw
        g["out.b"] = draw.sum(axis=0)
        dh = draw @ P["out.W"].T
        dtemb = np.zeros_like(temb)
        for b in reversed(range(self.n_blocks)):
            p = f"b{b}."
            h_in, a, c1, u, w, c2 = blocks[b]
            g[p + "l2.W"] = w.T @ dh
            g[p + "l2.b"] = dh.sum(axis=0)
            dw = dh @ P[p + "l2.W"].T
            dv, g[p + "ln2.g"], g[p + "ln2.b"] = layernorm_bwd(dw, P[p + "ln2.g"], c2)
            du = dv * silu_grad(u)
            g[p + "l1.W"] = a.T @ du
            g[p + "l1.b"] = du.sum(axis=0)
            g[p + "lt.W"] = temb.T @ du
            g[p + "lt.b"] = du.sum(axis=0)
            dtemb += du @ P[p + "lt.W"].T
            da = du @ P[p + "l1.W"].T
            dh_ln, g[p + "ln1.g"], g[p + "ln1.b"] = layernorm_bwd(da, P[p + "ln1.g"], c1)
            dh = dh + dh_ln
        g["in.W"] = x.T @ dh
        g["in.b"] = dh.sum(axis=0)
        g["e2.W"] = a1.T @ dtemb
        g["e2.b"] = dtemb.sum(axis=0)
        dz1 = (dtemb @ P["e2.W"].T) * silu_grad(z1)
        g["e1.W"] = f.T @ dz1
        g["e1.b"] = dz1.sum(axis=0)
        return {k: g[k] for k in self.params}

    # -- persistence -------------------------------------------------------------
    def save(self, path, step=0, extra=None):
        names = list(self.params)
        header = {"hyper": self.hyper(), "step": int(step), "extra": extra or {},
                  "tensors": [[n, list(self.params[n].shape)] for n in names]}
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for n in names:
                fh.write(np.ascontiguousarray(self.params[n], dtype="<f8").tobytes())  # always f64 on disk

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            (n,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(n))
            hy = dict(header["hyper"])
            sch = NoiseSchedule(**hy.pop("schedule"))
            net = cls(schedule=sch, **hy)
            for name, shape in header["tensors"]:
                count = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(8 * count), dtype="<f8")
                net.params[name] = data.reshape(shape).astype(net.dtype)
        return net, header


def timestep_embedding_dim(net: ScoreNet):
    return 2 * net.n_freqs


def fourier_time_embed(t, schedule: NoiseSchedule, n_freqs, net: ScoreNet | None = None):
    """Raw ``[sin, cos]`` features, or the full 128-dim embedding when ``net`` is given."""
    if net is None:
        return fourier_features(t, schedule, fourier_frequencies(schedule, n_freqs))
    return net.time_embedding(t, schedule)[0]


# -- loss ---------------------------------------------------------------------

def dsm_loss_and_grad(net: ScoreNet, x0, eps, t, schedule: NoiseSchedule | None = None, weight_scale=1.0):
    """Mean over the batch of Var(t) ||s(x_t, t) + eps/sigma(t)||^2."""
    sch = schedule or net.schedule
    x0 = np.atleast_2d(x0)
    t = np.asarray(t, dtype=np.float64)
    alpha = np.asarray(sch.alpha(t))[:, None]
    sigma = np.asarray(sch.sigma(t))[:, None]
    var = np.asarray(sch.var(t))[:, None]
    xt = alpha * x0 + sigma * eps
    s, cache = net.forward(xt, t, sch, cache=True)
    resid = s.astype(np.float64) + eps / sigma
    wt = weight_scale * var
    B = len(x0)
    loss = float(np.sum(wt * resid**2) / B)
    grads = net.backward((2.0 * wt * resid / B).astype(net.dtype), cache)
    return loss, grads


# -- optimiser ----------------------------------------------------------------

@dataclass
class OptimState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    clip: float = 1.0
    warmup: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads):
    return math.sqrt(sum(kernels.sum_squares(g) for g in grads.values()))


def adamw_step(params: dict, grads: dict, opt: OptimState):
    """Clip to global norm ``opt.clip``, then one AdamW update in place.

    Weight decay is decoupled and applied to every parameter. Returns the
    pre-clip gradient norm.
    """
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NonFiniteActivation("non-finite gradient")
    scale = opt.clip / norm if opt.clip and norm > opt.clip else 1.0
    opt.step += 1
    lr = opt.lr * min(1.0, opt.step / opt.warmup) if opt.warmup > 0 else opt.lr
    bc1 = 1.0 - opt.beta1**opt.step
    bc2 = 1.0 - opt.beta2**opt.step
    for k, p in params.items():
        if k not in opt.m:
            opt.m[k] = np.zeros_like(p)
            opt.v[k] = np.zeros_like(p)
        g = np.ascontiguousarray(grads[k], dtype=p.dtype)
        kernels.adamw_update(p, g, opt.m[k], opt.v[k], scale, lr, opt.weight_decay,
                             opt.beta1, opt.beta2, opt.eps, bc1, bc2)
    return norm


def train_dsm(net: ScoreNet, data, steps, batch_size, opt: OptimState, rng, schedule=None,
              callback=None, eval_interval=0):
    """Minibatch DSM training with t ~ U[t_min, t_max].

    ``callback(step, net, last_loss)`` runs at step 0 and every
    ``eval_interval`` steps (and at the last step). Returns the loss trace.
    """
    sch = schedule or net.schedule
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    t_lo = sch.t_min if sch.t_min > 0 else 1e-4
    t_hi = sch.t_max if math.isfinite(sch.t_max) else 1.0
    losses = []
    if callback is not None:
        callback(0, net, float("nan"))
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(data), batch_size)
        t = rng.uniform(t_lo, t_hi, batch_size)
        eps = rng.standard_normal((batch_size, net.input_dim))
        loss, grads = dsm_loss_and_grad(net, data[idx], eps, t, sch)
        adamw_step(net.params, grads, opt)
        losses.append(loss)
        if callback is not None and eval_interval and (step % eval_interval == 0 or step == steps):
            callback(step, net, loss)
    return losses
