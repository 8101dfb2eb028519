"""Preset training runs: configuration, the training loop with metric traces,
and on-disk artifacts (frozen config, trace CSV, checkpoint, summary JSON)."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .diagnostics import memorization_fraction
from .errors import ConfigError, DegenerateVector, NonFiniteState
from .geometry import SurfaceDensity, manifold_from_config, sample_surface
from .nn import OptimState, ScoreNet, dsm_loss_and_grad, train_dsm
from .sampler import NoiseSchedule, annealed_langevin
from .score import Learned, alignment

# name: (n_train, hidden, layers, weight_decay, steps, lr, beta_max, t_min)
PRESETS = {
    "deep_memo": (50, 2048, 8, 1e-8, 20000, 1e-3, 20.0, 1e-5),
    "fast_memo": (100, 1024, 6, 1e-8, 20000, 1e-3, 20.0, 1e-4),
    "std_small": (100, 512, 4, 1e-6, 10000, 5e-4, 10.0, 1e-4),
    "std_med": (200, 512, 4, 1e-6, 10000, 2e-4, 10.0, 1e-3),
    "rob_med": (200, 512, 3, 1e-2, 10000, 2e-4, 5.0, 1e-3),
    "gen": (1000, 512, 3, 1e-6, 5000, 2e-4, 5.0, 1e-3),
}
BATCH_SIZE = 512


@dataclass
class RunConfig:
    preset: str = "gen"
    n_train: int = 1000
    hidden: int = 512
    layers: int = 3
    weight_decay: float = 1e-6
    steps: int = 5000
    lr: float = 2e-4
    beta_max: float = 5.0
    t_min: float = 1e-3
    beta_min: float = 0.1
    batch_size: int = BATCH_SIZE
    scale: float = 1.0
    seed: int = 0
    manifold: str = "so"
    so_d: int = 3
    radius: float = 1.0
    ambient_dim: int = 0
    density: str = "uniform"
    density_sigma: float = 0.5
    eval_interval: int = 50
    n_eval_samples: int = 256
    n_probe: int = 256
    langevin_levels: int = 16
    langevin_steps: int = 60
    langevin_c: float = 0.05
    warmup: int = 100
    dtype: str = "float64"

    def manifold_obj(self):
        if self.manifold == "so":
            return manifold_from_config({"kind": "so", "d": self.so_d})
        cfg = {"kind": self.manifold, "radius": self.radius}
        if self.ambient_dim:
            cfg["ambient_dim"] = self.ambient_dim
        return manifold_from_config(cfg)

    def density_obj(self):
        if self.density == "uniform":
            return SurfaceDensity()
        if self.density == "projected_normal":
            return SurfaceDensity("projected_normal", sigma=self.density_sigma)
        raise ConfigError(f"unknown density {self.density!r}")

    def schedule(self):
        return NoiseSchedule.vp(beta_max=self.beta_max, t_min=self.t_min, beta_min=self.beta_min)

    def validate(self):
        if self.preset not in PRESETS and self.preset != "custom":
            raise ConfigError(f"unknown preset {self.preset!r}; valid names: {', '.join(PRESETS)}")
        for name in ("n_train", "hidden", "layers", "batch_size", "n_eval_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.steps < 0 or self.eval_interval < 1:
            raise ConfigError("steps must be >= 0 and eval_interval >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        if not 0 < self.t_min < 1:
            raise ConfigError("t_min must lie in (0, 1)")
        return self

    # -- key=value text format ------------------------------------------------
    def to_text(self):
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {json.dumps(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, base=None):
        cfg = base or cls()
        return cfg.updated(parse_kv(text))

    def updated(self, overrides: dict):
        known = {f.name: f for f in fields(self)}
        vals = asdict(self)
        for k, v in overrides.items():
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
            typ = type(vals[k])
            try:
                vals[k] = typ(v) if not (typ is int and isinstance(v, float) and not v.is_integer()) else v
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {k}: {v!r}") from exc
        return RunConfig(**vals)


def parse_kv(text):
    """Parse ``key = value`` lines; values are JSON when possible, else strings."""
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def preset_config(name, scale=1.0, seed=0, **overrides) -> RunConfig:
    """Table values for ``name`` with n_train, hidden, steps and batch scaled by ``scale``."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; valid names: {', '.join(PRESETS)}")
    n, h, layers, wd, steps, lr, bmax, tmin = PRESETS[name]
    cfg = RunConfig(
        preset=name,
        n_train=max(2, int(round(n * scale))),
        hidden=max(8, int(round(h * scale))),
        layers=layers,
        weight_decay=wd,
        steps=int(round(steps * scale)),
        lr=lr,
        beta_max=bmax,
        t_min=tmin,
        batch_size=max(16, int(round(BATCH_SIZE * scale))),
        scale=scale,
        seed=seed,
    )
    return cfg.updated(overrides).validate()


# -- training run -------------------------------------------------------------

TRACE_COLUMNS = ("step", "loss", "alignment", "manifold_error", "memorization", "wall_s")


@dataclass
class TrainingRun:
    config: RunConfig
    trace: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    net: ScoreNet | None = None


def probe_time(schedule: NoiseSchedule, target_var=1e-2):
    """Smallest time with Var(t) >= target_var (bisection)."""
    lo, hi = schedule.t_min, schedule.t_max
    if schedule.var(lo) >= target_var:
        return lo
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if schedule.var(mid) >= target_var:
            hi = mid
        else:
            lo = mid
    return hi


def _evaluate(net, cfg: RunConfig, m, train, probes, t_probe, rng):
    sch = net.schedule
    field_ = Learned(net, sch)
    try:
        align = float(np.mean(alignment(field_, m, probes, t_probe)))
    except DegenerateVector:
        align = 0.0
    raw = annealed_langevin(field_, cfg.n_eval_samples, rng, levels=cfg.langevin_levels,
                            steps_per_level=cfg.langevin_steps, t_max=1.0, t_min=cfg.t_min,
                            c=cfg.langevin_c, schedule=sch)
    merr = float(np.mean(m.dist(raw)))
    proj = m.project(raw) if m.kind == "so" else raw
    mem = memorization_fraction(proj, train).fraction_memorized
    return align, merr, mem, proj


def run_preset(cfg: RunConfig | str, out_dir=None, scale=None, seed=None, progress=None) -> TrainingRun:
    """Train a ScoreNet on samples from the configured manifold, tracking metrics."""
    if isinstance(cfg, str):
        cfg = preset_config(cfg, 1.0 if scale is None else scale, 0 if seed is None else seed)
    cfg.validate()
    m = cfg.manifold_obj()
    ss = np.random.SeedSequence(cfg.seed)
    data_rng, init_rng, train_rng, eval_rng = (np.random.default_rng(s) for s in ss.spawn(4))
    train = sample_surface(m, cfg.density_obj(), data_rng, cfg.n_train)
    sch = cfg.schedule()
    net = ScoreNet(m.D, cfg.hidden, cfg.layers, schedule=sch, rng=init_rng, dtype=cfg.dtype)
    opt = OptimState(lr=cfg.lr, weight_decay=cfg.weight_decay, warmup=cfg.warmup)
    probes, _ = m.sample_tube(eval_rng, cfg.n_probe, 0.1 * min(m.reach, 1.0))
    t_probe = probe_time(sch)
    run = TrainingRun(cfg)
    start = time.time()
    last = {}
    idx = eval_rng.integers(0, len(train), cfg.batch_size)
    t0 = eval_rng.uniform(sch.t_min, sch.t_max, cfg.batch_size)
    init_loss, _ = dsm_loss_and_grad(net, train[idx], eval_rng.standard_normal((cfg.batch_size, m.D)), t0, sch)

    def record(step, loss):
        align, merr, mem, samples = _evaluate(net, cfg, m, train, probes, t_probe, eval_rng)
        row = {"step": step, "loss": float(loss), "alignment": align, "manifold_error": merr,
               "memorization": mem, "wall_s": time.time() - start}
        if not all(math.isfinite(v) for v in row.values()):
            raise NonFiniteState(f"non-finite metric at step {step}: {row}")
        run.trace.append(row)
        last["samples"] = samples
        if progress:
            progress(row)

    record(0, init_loss)
    done = 0
    while done < cfg.steps:
        chunk = min(cfg.eval_interval, cfg.steps - done)
        part = train_dsm(net, train, chunk, cfg.batch_size, opt, train_rng, sch)
        done += chunk
        record(done, np.mean(part))
    run.net = net
    final = run.trace[-1]
    run.summary = {
        "preset": cfg.preset,
        "seed": cfg.seed,
        "scale": cfg.scale,
        "steps": cfg.steps,
        "n_params": int(net.n_params()),
        "final": final,
        "trend": geometry_before_memorization(run.trace),
        "wall_s": time.time() - start,
    }
    if out_dir is not None:
        write_run(run, out_dir, last.get("samples"))
    return run


def first_crossing(steps, values, frac):
    values = np.asarray(values, dtype=float)
    target = frac * values[-1]
    hit = np.flatnonzero(values >= target)
    return int(steps[hit[0]]) if len(hit) else None


def geometry_before_memorization(trace):
    """Step where alignment first reaches 0.9 of its final value versus the
    step where memorisation first reaches 0.5 of its final value."""
    if len(trace) < 2:
        return {"alignment_step": None, "memorization_step": None, "precedes": None}
    steps = [r["step"] for r in trace]
    a = first_crossing(steps, [r["alignment"] for r in trace], 0.9)
    mfin = trace[-1]["memorization"]
    mstep = first_crossing(steps, [r["memorization"] for r in trace], 0.5) if mfin > 0 else None
    precedes = None if a is None or mstep is None else bool(a <= mstep)
    return {"alignment_step": a, "memorization_step": mstep, "precedes": precedes}


def write_run(run: TrainingRun, out_dir, samples=None):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(run.config.to_text())
    write_trace(run.trace, os.path.join(out_dir, "trace.csv"))
    run.net.save(os.path.join(out_dir, "checkpoint.bin"), step=run.config.steps,
                 extra={"preset": run.config.preset, "seed": run.config.seed})
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(run.summary, fh, indent=2, sort_keys=True)
    if samples is not None:
        np.savetxt(os.path.join(out_dir, "samples.csv"), samples, delimiter=",")


def write_trace(trace, path):
    with open(path, "w") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for r in trace:
            fh.write(",".join(f"{r[c]:.10g}" if c != "step" else str(r[c]) for c in TRACE_COLUMNS) + "\n")


def read_trace(path):
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            vals = line.strip().split(",")
            if len(vals) != len(header):
                continue
            row = {h: float(v) for h, v in zip(header, vals)}
            row["step"] = int(row["step"])
            rows.append(row)
    return rows
