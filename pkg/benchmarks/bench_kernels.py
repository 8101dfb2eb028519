"""Compare the compiled and NumPy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-N wall time per kernel and the speedup of the compiled path.
"""

import argparse
import timeit

import numpy as np

from coarse_diffusion import kernels


def cases(rng):
    x = rng.standard_normal((4000, 3))
    atoms = rng.standard_normal((1000, 3))
    logw = np.full(len(atoms), -np.log(len(atoms)))
    yield "mixture_logpdf_score 4000x1000 D=3", lambda b: kernels.mixture_logpdf_score(x, atoms, logw, 0.1, True, backend=b)
    xs = rng.standard_normal((2000, 9))
    train = rng.standard_normal((1000, 9))
    yield "two_nearest_sq 2000x1000 D=9", lambda b: kernels.two_nearest_sq(xs, train, backend=b)
    n = 2_000_000
    p, g = rng.standard_normal(n), rng.standard_normal(n)
    m, v = np.zeros(n), np.zeros(n)
    yield "adamw_update 2e6 params", lambda b: kernels.adamw_update(
        p, g, m, v, 1.0, 1e-3, 1e-6, 0.9, 0.999, 1e-8, 0.1, 0.001, backend=b)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    rng = np.random.default_rng(0)
    print(f"{'kernel':38s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases(rng):
        times = [min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in backends]
        row = f"{name:38s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:11.1f}x"  # python / cython
        print(row)


if __name__ == "__main__":
    main()
