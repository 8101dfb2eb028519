"""Command-line entry point.

    coarse-diffusion run-preset --preset gen --scale 0.25 --out runs/gen
    coarse-diffusion theorem-suite contraction --out reports/
    coarse-diffusion sample --manifold circle --n 2000 --out samples/
    coarse-diffusion coverage --manifold circle --out cov/
    coarse-diffusion kl-rate --manifold circle:ambient_dim=3 --out kl/
    coarse-diffusion plot runs/gen/trace.csv --out runs/gen

Exit status is 0 iff every hard gate evaluated by the command passed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .errors import CoarseDiffusionError, ConfigError
from .geometry import SurfaceDensity, manifold_from_config, sample_surface


def parse_manifold(spec: str) -> dict:
    """``circle``, ``sphere``, ``torus``, ``so3`` or ``kind:key=value,...``."""
    kind, _, rest = spec.partition(":")
    kind = kind.strip().lower()
    cfg = {}
    if kind.startswith("so") and kind[2:].isdigit():
        cfg = {"kind": "so", "d": int(kind[2:])}
    elif kind in ("circle", "sphere", "torus", "so"):
        cfg = {"kind": kind}
    else:
        raise ConfigError(f"unknown manifold {spec!r}; use circle, sphere, torus, soN or kind:key=value")
    for item in filter(None, (s.strip() for s in rest.split(","))):
        k, eq, v = item.partition("=")
        if not eq:
            raise ConfigError(f"bad manifold option {item!r}")
        cfg[k.strip()] = json.loads(v)
    return cfg


def _write_json(path, obj):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _add_common(p, seed=0):
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--config", default=None, help="key = value file")


def build_parser():
    ap = argparse.ArgumentParser(prog="coarse-diffusion", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-preset", help="train a ScoreNet preset and record metric traces")
    _add_common(p, seed=None)
    p.add_argument("--preset", default=None, help="preset name (default gen)")
    p.add_argument("--scale", type=float, default=None, help="scale factor (default 0.25)")
    p.add_argument("--manifold", default=None, help="training manifold (default so3)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("theorem-suite", help="run an invariant battery")
    _add_common(p)
    p.add_argument("suite", nargs="?", default=None)
    p.add_argument("--preset", default=None, help="unused; accepted for symmetry")
    p.add_argument("--scale", type=float, default=None, help="scale for training suites")
    p.add_argument("--list", action="store_true")

    p = sub.add_parser("sample", help="hybrid sampling with the empirical-oracle score")
    _add_common(p)
    p.add_argument("--manifold", default="circle")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--T", type=float, default=4.0)
    p.add_argument("--t0", type=float, default=0.25)
    p.add_argument("--tau", type=float, default=0.0025)
    p.add_argument("--checkpoint", default=None, help="use a trained ScoreNet instead of the oracle")

    p = sub.add_parser("coverage", help="coverage of empirical and sampled measures")
    _add_common(p)
    p.add_argument("--manifold", default="circle")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--samples", default=None, help="CSV of samples to score instead of sampling")
    p.add_argument("--t0", type=float, default=0.25)
    p.add_argument("--tau", type=float, default=0.0025)
    p.add_argument("--rho", type=float, default=0.5)

    p = sub.add_parser("kl-rate", help="KL(population || empirical) against N")
    _add_common(p)
    p.add_argument("--manifold", default="circle:ambient_dim=3")
    p.add_argument("--t0", type=float, default=0.5)
    p.add_argument("--n-seeds", type=int, default=10)
    p.add_argument("--n-mc", type=int, default=20_000)
    p.add_argument("--grid", default="32,64,128,256,512,1024")

    p = sub.add_parser("plot", help="render a trace CSV as SVG panels")
    p.add_argument("trace")
    p.add_argument("--out", default=None)
    p.add_argument("--title", default="")
    return ap


def _config_overrides(args):
    over = {}
    if getattr(args, "config", None):
        from .presets import parse_kv

        with open(args.config) as fh:
            over.update(parse_kv(fh.read()))
    return over


def cmd_run_preset(args):
    from .plots import emit_plots
    from .presets import parse_kv, preset_config, run_preset

    over = _config_overrides(args)
    over.update(parse_kv("\n".join(args.set)))
    if args.manifold:
        mcfg = parse_manifold(args.manifold)
        over["manifold"] = mcfg.pop("kind")
        if over["manifold"] == "so":
            over["so_d"] = mcfg.pop("d", 3)
        for k, v in mcfg.items():
            over[k] = v
    # precedence: explicit flag > config file > default
    preset = args.preset or over.pop("preset", "gen")
    scale = args.scale if args.scale is not None else over.pop("scale", 0.25)
    seed = args.seed if args.seed is not None else over.pop("seed", 0)
    for k in ("preset", "scale", "seed"):
        over.pop(k, None)
    cfg = preset_config(preset, scale, seed, **over)
    out = args.out or os.path.join("runs", f"{cfg.preset}-s{cfg.seed}")

    def progress(row):
        print(f"step {row['step']:>6}  loss {row['loss']:.4g}  align {row['alignment']:.3f}  "
              f"merr {row['manifold_error']:.4f}  mem {row['memorization']:.3f}", flush=True)

    run = run_preset(cfg, out, progress=progress)
    if not args.no_plots:
        emit_plots(run.trace, out, cfg.preset)
    print(f"wrote {out}")
    return 0


def cmd_theorem_suite(args):
    from .suites import FAST, SUITES, run_suite

    if args.list or args.suite is None:
        for k, fn in SUITES.items():
            print(f"{k:14s} {(fn.__doc__ or '').strip().splitlines()[0]}")
        return 0
    names = FAST if args.suite == "all" else [args.suite]
    kwargs = {"seed": args.seed}
    if args.scale is not None:
        kwargs["scale"] = args.scale
    verdicts = []
    for name in names:
        if name not in SUITES:
            raise ConfigError(f"unknown suite {name!r}; choose from all, {', '.join(SUITES)}")
        kw = {k: v for k, v in kwargs.items() if k == "seed" or name in ("memorization", "trend")}
        v = run_suite(name, **kw)
        print(v.line(), flush=True)
        verdicts.append(v)
    report = {"suites": [v.to_dict() for v in verdicts],
              "all_hard_passed": all(v.passed for v in verdicts if v.hard)}
    if args.out:
        _write_json(os.path.join(args.out, "report.json"), report)
    return 0 if report["all_hard_passed"] else 1


def _training_data(args, rng):
    m = manifold_from_config(parse_manifold(args.manifold))
    return m, sample_surface(m, SurfaceDensity(), rng, args.n_train)


def cmd_sample(args):
    from .sampler import SamplerConfig, annealed_langevin, hybrid_sample
    from .score import Learned, OracleMixture

    rng = np.random.default_rng(args.seed)
    m, train = _training_data(args, rng)
    if args.checkpoint:
        from .nn import ScoreNet

        net, _ = ScoreNet.load(args.checkpoint)
        if net.input_dim != m.D:
            raise ConfigError(f"checkpoint dimension {net.input_dim} does not match manifold dimension {m.D}")
        sch = net.schedule
        x = annealed_langevin(Learned(net, sch), args.n, rng, t_min=sch.t_min, schedule=sch)
    else:
        cfg = SamplerConfig(T=args.T, t0=args.t0, tau=args.tau, n_sde_steps=400, n_ode_steps=128)
        x = hybrid_sample(OracleMixture(train), args.n, cfg, rng)
    d = np.asarray(m.dist(x))
    summary = {"n": int(len(x)), "mean_dist": float(d.mean()), "max_dist": float(d.max()),
               "manifold": parse_manifold(args.manifold)}
    print(json.dumps(summary))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        np.savetxt(os.path.join(args.out, "samples.csv"), x, delimiter=",")
        _write_json(os.path.join(args.out, "summary.json"), summary)
    return 0


def cmd_coverage(args):
    from .diagnostics import (cmin_lower_bound, cmin_parameters, coverage_report, covering_radius,
                              projection_error, volume_constants)
    from .sampler import SamplerConfig, hybrid_sample
    from .score import OracleMixture

    rng = np.random.default_rng(args.seed)
    m, train = _training_data(args, rng)
    oracle = OracleMixture(train)
    if args.samples:
        gen = np.loadtxt(args.samples, delimiter=",", ndmin=2)
    else:
        cfg = SamplerConfig(T=4.0, t0=args.t0, tau=args.tau, n_sde_steps=400, n_ode_steps=128)
        gen = hybrid_sample(oracle, args.n, cfg, rng)
    delta = 0.25 * covering_radius(train, m, rng=rng)
    delta = min(delta, 0.49 * m.injectivity_radius)
    alpha = 4 * projection_error(oracle, m, args.tau, 2000, rng).quantiles["0.5"]
    n_centers = int(math.ceil(m.volume / (delta / 2) ** m.k)) if m.k <= 2 else 4096
    a = cmin_parameters(delta, args.rho, m.reach) if args.rho < m.reach else None
    c_min = None
    if a is not None:
        c_vol, C_vol = volume_constants(m, delta)
        c_min = cmin_lower_bound(1.0, 1.0, m.k, m.D, args.t0, args.rho, c_vol, C_vol, a)
    emp = coverage_report(train, m, None, delta, alpha, n_centers, rng=rng)
    hyb = coverage_report(gen, m, None, delta, alpha, n_centers, rng=rng, c_min=c_min)
    report = {"empirical": emp.to_dict(), "sampled": hyb.to_dict(),
              "separated": bool(emp.c_hat == 0 and c_min is not None and hyb.c_hat >= c_min > 0)}
    print(json.dumps(report, indent=2))
    if args.out:
        _write_json(os.path.join(args.out, "report.json"), report)
        hyb.to_csv(os.path.join(args.out, "coverage.csv"))
        emp.to_csv(os.path.join(args.out, "coverage_empirical.csv"))
    return 0 if report["separated"] else 1


def cmd_kl_rate(args):
    from .measures import smoothing_rate_experiment
    from .plots import loglog_svg

    m = manifold_from_config(parse_manifold(args.manifold))
    grid = [int(v) for v in args.grid.split(",")]
    seeds = [args.seed + i for i in range(args.n_seeds)]
    res = smoothing_rate_experiment(m, SurfaceDensity(), args.t0, grid, seeds, args.n_mc)
    summary = res.summary()
    summary["passed"] = bool(-1.35 <= res.slope <= -0.65)
    print(json.dumps(summary, indent=2))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        res.to_csv(os.path.join(args.out, "kl_rate.csv"))
        _write_json(os.path.join(args.out, "report.json"), summary)
        ns = sorted(res.medians)
        with open(os.path.join(args.out, "kl_rate.svg"), "w") as fh:
            fh.write(loglog_svg(ns, [res.medians[n] for n in ns], f"KL rate, slope {res.slope:.3f}"))
    return 0 if summary["passed"] else 1


def cmd_plot(args):
    from .plots import emit_plots
    from .presets import read_trace

    out = args.out or os.path.dirname(os.path.abspath(args.trace))
    for p in emit_plots(read_trace(args.trace), out, args.title):
        print(p)
    return 0


COMMANDS = {
    "run-preset": cmd_run_preset,
    "theorem-suite": cmd_theorem_suite,
    "sample": cmd_sample,
    "coverage": cmd_coverage,
    "kl-rate": cmd_kl_rate,
    "plot": cmd_plot,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CoarseDiffusionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
