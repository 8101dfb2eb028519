"""NumPy reference implementations of the compiled kernels.

Blocked over query rows so that the (rows x atoms) distance matrix stays
under a few tens of megabytes.
"""

import numpy as np

_BLOCK_ELEMS = 2_000_000


def _sqdist(x, atoms):
    diff = x[:, None, :] - atoms[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _blocks(m, n, d):
    rows = max(1, _BLOCK_ELEMS // max(1, n * d))
    for start in range(0, m, rows):
        yield slice(start, min(m, start + rows))


def mixture_logpdf_score(x, atoms, logw, t, want_score=True):
    m, d = x.shape
    n = atoms.shape[0]
    const = -0.5 * d * np.log(2.0 * np.pi * t)
    logp = np.empty(m)
    score = np.empty((m, d)) if want_score else None
    for sl in _blocks(m, n, d):
        logits = logw[None, :] - _sqdist(x[sl], atoms) / (2.0 * t)
        mx = logits.max(axis=1, keepdims=True)
        w = np.exp(logits - mx)
        s = w.sum(axis=1)
        logp[sl] = mx[:, 0] + np.log(s) + const
        if want_score:
            mean = (w @ atoms) / s[:, None]
            score[sl] = (mean - x[sl]) / t
    return logp, score


def two_nearest_sq(x, atoms):
    m, d = x.shape
    n = atoms.shape[0]
    d1 = np.empty(m)
    d2 = np.empty(m)
    idx = np.empty(m, dtype=np.intp)
    for sl in _blocks(m, n, d):
        dd = _sqdist(x[sl], atoms)
        i1 = np.argmin(dd, axis=1)
        rows = np.arange(dd.shape[0])
        d1[sl] = dd[rows, i1]
        idx[sl] = i1
        if n > 1:
            dd[rows, i1] = np.inf
            d2[sl] = dd.min(axis=1)
        else:
            d2[sl] = np.inf
    return d1, d2, idx


def adamw_update(p, g, m, v, gscale, lr, wd, b1, b2, eps, bc1, bc2):
    gs = g * gscale
    m *= b1
    m += (1.0 - b1) * gs
    v *= b2
    gs *= gs
    v += (1.0 - b2) * gs
    if wd:
        p *= 1.0 - lr * wd
    denom = np.sqrt(v / bc2)
    denom += eps
    p -= (lr / bc1) * m / denom

