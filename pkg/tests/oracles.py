"""Shared independent oracles for the test suite.

Finite differences, feasible-coupling generation by iterative proportional
fitting, and small random-instance builders.  These stay deliberately naive:
they must not share code paths with the implementations they check.
"""

import numpy as np


def finite_diff_gradient(fun, x, h=1e-5):
    """Central finite differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return grad


def rel_err(approx, exact):
    scale = np.abs(exact).max()
    return np.abs(approx - exact).max() / (scale if scale > 0 else 1.0)


def random_histogram(rng, n, floor=0.0):
    w = rng.dirichlet(np.ones(n)) + floor
    return w / w.sum()


def ipf_coupling(rng, a, b, rounds=400):
    """A feasible coupling of (a, b): random positive matrix scaled by IPF."""
    p = rng.uniform(0.25, 1.0, size=(a.size, b.size))
    for _ in range(rounds):
        p *= (a / p.sum(axis=1))[:, None]
        p *= (b / p.sum(axis=0))[None, :]
    return p


def brute_force_wbp_value(B, weights, cost_fn, step=0.01):
    """Grid search of the barycenter objective over a coarse simplex mesh.

    cost_fn(a) must return sum_k weights_k * W0(a, b_k).  Only usable for
    4-bin histograms; the mesh has ~1.8e5 points at step 0.01.
    """
    ticks = int(round(1.0 / step))
    best = np.inf
    for i in range(ticks + 1):
        for j in range(ticks + 1 - i):
            for k in range(ticks + 1 - i - j):
                a = np.array([i, j, k, ticks - i - j - k], dtype=float) / ticks
                val = cost_fn(a)
                if val < best:
                    best = val
    return best
