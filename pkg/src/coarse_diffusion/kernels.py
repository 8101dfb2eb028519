"""Backend selection for the numerical hot loops.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
NumPy implementations in ``_pykernels`` are used. Setting the environment
variable ``COARSE_DIFFUSION_BACKEND=python`` forces the fallback.

Both backends expose:

``mixture_logpdf_score(x, atoms, logw, t, want_score=True)``
    log of sum_j exp(logw_j) N(x; a_j, t I) for each row of ``x`` and, when
    requested, the gradient of that log-density.
``two_nearest_sq(x, atoms)``
    squared distances to the nearest and second-nearest atom plus the index
    of the nearest one.
``adamw_update(p, g, m, v, ...)``
    fused in-place AdamW step on flat parameter buffers.
"""

import os

import numpy as np

from . import _pykernels

_ckernels = None
if os.environ.get("COARSE_DIFFUSION_BACKEND", "").lower() not in ("python", "py", "numpy"):
    try:
        from . import _ckernels
    except ImportError:
        _ckernels = None

BACKEND = "cython" if _ckernels is not None else "python"
_impl = _ckernels if _ckernels is not None else _pykernels


def _rows(x):
    return np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))


def mixture_logpdf_score(x, atoms, logw, t, want_score=True, backend=None):
    impl = _select(backend)
    return impl.mixture_logpdf_score(
        _rows(x), _rows(atoms), np.ascontiguousarray(logw, dtype=np.float64), float(t), bool(want_score)
    )


def two_nearest_sq(x, atoms, backend=None):
    impl = _select(backend)
    return impl.two_nearest_sq(_rows(x), _rows(atoms))


def nearest_sq(x, atoms, backend=None):
    d1, _, idx = two_nearest_sq(x, atoms, backend=backend)
    return d1, idx


def adamw_update(p, g, m, v, gscale, lr, wd, b1, b2, eps, bc1, bc2, backend=None):
    """Fused in-place AdamW update of contiguous arrays (any shape, same dtype)."""
    impl = _select(backend)
    impl.adamw_update(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                      gscale, lr, wd, b1, b2, eps, bc1, bc2)


def sum_squares(g):
    g = np.ascontiguousarray(g).reshape(-1)
    return float(np.dot(g, g))


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not available in this install")
        return _ckernels
    raise ValueError(f"unknown backend {backend!r}")


def available_backends():
    return ["python"] + (["cython"] if _ckernels is not None else [])
