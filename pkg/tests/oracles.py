"""Independent reference computations used by the tests.

Nothing here imports the package's solvers: the oracles are brute force
(finite differences, exhaustive partitions, dense grids) or textbook formulas.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np
from scipy.optimize import minimize


def central_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def central_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = step
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def rel_err(a, b, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), floor))


def isotonic_exhaustive(values, weights) -> np.ndarray:
    """Weighted isotonic regression by enumerating every contiguous partition."""
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = x.size
    best, best_sse = None, math.inf
    for cuts in itertools.product((False, True), repeat=n - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        means = []
        for a, b in zip(bounds, bounds[1:]):
            means.append(math.fsum(w[a:b] * x[a:b]) / math.fsum(w[a:b]))
        if any(m2 < m1 for m1, m2 in zip(means, means[1:])):
            continue
        fit = np.concatenate([np.full(b - a, m) for (a, b), m in zip(zip(bounds, bounds[1:]), means)])
        sse = math.fsum(w * (x - fit) ** 2)
        if sse < best_sse - 1e-15:
            best, best_sse = fit, sse
    return best


def binomial_loglik(doses, n, y, family: str, beta, eps: float = 1e-10) -> float:
    X = np.vander(np.asarray(doses, float), len(beta), increasing=True)
    eta = X @ np.asarray(beta, float)
    if family == "LG":
        p = 1.0 / (1.0 + np.exp(-eta))
    else:
        p = 1.0 - np.exp(-eta)
    y = np.asarray(y, float)
    f = np.asarray(n, float) - y
    lp = np.log(np.maximum(p, eps))
    lq = np.log(1 - np.minimum(p, 1 - eps))
    return float(np.sum(np.where(y > 0, y * lp, 0.0)) + np.sum(np.where(f > 0, f * lq, 0.0)))


def grid_search_mle(doses, n, y, family: str, order: int) -> tuple[np.ndarray, float]:
    """Dense grid followed by a constrained local polish."""
    doses = np.asarray(doses, float)
    X = np.vander(doses, order + 1, increasing=True)
    if family == "LG":
        axes = [np.linspace(-10, 2, 61), np.linspace(-5, 20, 61)] + [np.linspace(-15, 15, 61)] * (order - 1)
    else:
        axes = [np.linspace(0, 1, 41), np.linspace(-1, 3, 61)] + [np.linspace(-2, 3, 61)] * (order - 1)
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    eta = grid @ X.T
    if family == "MS":
        keep = np.all(eta >= 0, axis=1)
        grid, eta = grid[keep], eta[keep]
        p = -np.expm1(-eta)
    else:
        p = 1.0 / (1.0 + np.exp(-eta))
    yy = np.asarray(y, float)
    ff = np.asarray(n, float) - yy
    ll = np.log(np.maximum(p, 1e-10)) @ yy + np.log(1 - np.minimum(p, 1 - 1e-10)) @ ff
    best = grid[int(np.argmax(ll))]

    def neg(b):
        return -binomial_loglik(doses, n, y, family, b)

    if family == "LG":
        res = minimize(neg, best, method="BFGS", options={"gtol": 1e-10, "maxiter": 10000})
        res = minimize(neg, res.x, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
    else:
        cons = [{"type": "ineq", "fun": lambda b: X @ b, "jac": lambda b: X}]
        res = minimize(neg, best, method="SLSQP", constraints=cons,
                       options={"ftol": 1e-15, "maxiter": 2000})
        # SLSQP tolerates tiny violations; shift the intercept back onto the feasible set.
        x = res.x.copy()
        x[0] -= min(0.0, float(np.min(X @ x)))
        return x, binomial_loglik(doses, n, y, family, x)
    return res.x, -res.fun
