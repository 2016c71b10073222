"""Pure-numpy kernels, used when the compiled core is unavailable.

Must stay bit-identical to ``_core.pyx``: the first-passage scan relies on
``np.cumsum`` being a sequential fold-left, and the SIR update writes the
exact same floating-point expressions elementwise.
"""

import numpy as np

IMPL = "fallback"


def first_passage_scan(x0, upper, inc):
    """See ``_core.first_passage_scan``."""
    path = np.cumsum(np.concatenate(([x0], inc)))[1:]
    low = path <= 0.0
    high = path >= upper
    crossed = low | high
    if not crossed.any():
        return len(inc), 0, path[-1]
    k = int(np.argmax(crossed))
    hit = 1 if low[k] else 2
    return k + 1, hit, path[k]


def sir_curves(lam, mu, i0, n_pop, horizon, substeps, keep_path=False):
    """See ``_core.sir_curves``. Vectorized across the batch dimension."""
    lam = np.asarray(lam, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    n_batch = lam.shape[0]
    n_sub = horizon * substeps
    dt = 1.0 / substeps
    inew = np.empty((n_batch, horizon + 1))
    status = np.full(n_batch, -1, dtype=np.int64)
    path = np.empty((n_batch, n_sub + 1, 3)) if keep_path else None

    i = np.asarray(i0, dtype=np.float64).copy()
    s = n_pop - i
    r = np.zeros(n_batch)
    if keep_path:
        path[:, 0, 0] = s
        path[:, 0, 1] = i
        path[:, 0, 2] = r
    inew[:, 0] = lam * s * i / n_pop
    day = 1
    for step in range(n_sub):
        rate = lam * s * i / n_pop
        ds = -rate
        di = rate - mu * i
        dr = mu * i
        s = s + dt * ds
        i = i + dt * di
        r = r + dt * dr
        np.maximum(s, 0.0, out=s)
        np.maximum(i, 0.0, out=i)
        bad = ~(np.isfinite(s) & np.isfinite(i) & np.isfinite(r))
        if bad.any():
            fresh = bad & (status < 0)
            status[fresh] = step
            s[bad] = 0.0
            i[bad] = 0.0
            r[bad] = 0.0
        if keep_path:
            path[:, step + 1, 0] = s
            path[:, step + 1, 1] = i
            path[:, step + 1, 2] = r
        if (step + 1) % substeps == 0:
            inew[:, day] = lam * s * i / n_pop
            day += 1
    return inew, status, path


def mmd_terms(x, y, bandwidth):
    """See ``_core.mmd_terms``. Materializes the Gram blocks."""
    scale = 1.0 / (2.0 * bandwidth * bandwidth)

    def gram(a, b):
        sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
        sq -= 2.0 * (a @ b.T)
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-scale * sq)

    kxx = gram(x, x)
    kyy = gram(y, y)
    kxy = gram(x, y)
    sxx = float(kxx.sum() - np.trace(kxx))
    syy = float(kyy.sum() - np.trace(kyy))
    sxy = float(kxy.sum())
    return sxx, syy, sxy
