"""Active-set damped Newton ascent for smooth concave objectives.

Both the binomial log-likelihood and the Kullback-Leibler objective are
concave in the coefficient vector for the logistic and multistage classes,
and the multistage parameter space is a polyhedral cone ``C x >= 0``. A
primal active-set Newton method therefore finds the global constrained
maximum in a handful of iterations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

Value = Callable[[NDArray[np.float64]], float]
Derivatives = Callable[[NDArray[np.float64]], "tuple[NDArray[np.float64], NDArray[np.float64]]"]


@dataclass(frozen=True)
class NewtonResult:
    x: NDArray[np.float64]
    value: float
    gradient: NDArray[np.float64]
    active: tuple[int, ...]
    iterations: int
    converged: bool
    diverged: bool
    message: str


def _null_space(rows: NDArray[np.float64], n: int) -> NDArray[np.float64]:
    if rows.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(rows)
    rank = int(np.sum(s > 1e-12 * s[0]))
    return vt[rank:].T


def _ascent_step(neg_h: NDArray[np.float64], g: NDArray[np.float64]) -> NDArray[np.float64]:
    """Solve ``neg_h p = g`` with Levenberg damping when ``neg_h`` is not safely PD."""
    k = g.size
    scale = max(float(np.trace(neg_h)) / k, 1e-300)
    mu = 0.0
    for _ in range(40):
        try:
            chol = np.linalg.cholesky(neg_h + mu * np.eye(k))
            diag = np.diag(chol)
            if diag.min() > 1e-8 * diag.max():
                y = np.linalg.solve(chol, g)
                return np.linalg.solve(chol.T, y)
        except np.linalg.LinAlgError:
            pass
        mu = scale * 1e-10 if mu == 0.0 else mu * 10.0
    return g / scale


def maximize_concave(
    value: Value,
    derivatives: Derivatives,
    x0: NDArray[np.float64],
    constraints: NDArray[np.float64] | None = None,
    *,
    gtol: float = 1e-9,
    max_iter: int = 500,
    xmax: float = 1e3,
) -> NewtonResult:
    """Maximize a concave function subject to ``constraints @ x >= 0``.

    ``value`` may return ``-inf`` outside the effective domain; ``x0`` must be
    feasible with a finite value. Convergence means the KKT conditions hold:
    the gradient projected onto the working set's null space is below ``gtol``
    (or the Newton decrement is at rounding level) and every active
    constraint carries a non-negative multiplier.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    C = np.zeros((0, n)) if constraints is None else np.asarray(constraints, dtype=float)
    slack = C @ x
    if np.any(slack < -1e-12):
        raise ValueError("starting point violates the constraints")
    f = value(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    active = set(int(i) for i in np.flatnonzero(slack <= 0.0))

    g = np.zeros(n)
    message = "iteration limit reached"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g, H = derivatives(x)
        idx = sorted(active)
        Z = _null_space(C[idx], n)
        floor = 1e-13 * max(1.0, abs(f))
        if Z.shape[1]:
            gz = Z.T @ g
            d = Z @ _ascent_step(-(Z.T @ H @ Z), gz)
            dec = float(g @ d)
            stationary = float(np.max(np.abs(gz))) <= gtol or dec <= 1e-3 * floor
        else:
            d = np.zeros(n)
            dec = 0.0
            stationary = True

        if stationary:
            if idx:
                lam = np.linalg.lstsq(C[idx].T, -g, rcond=None)[0]
                worst = int(np.argmin(lam))
                if lam[worst] < -max(gtol, 1e-10 * float(np.max(np.abs(g)))):
                    active.discard(idx[worst])
                    continue
            converged = True
            message = "converged"
            break

        # Longest feasible step along d, then backtrack for sufficient increase.
        slack = C @ x
        cd = C @ d
        alpha_max, block = np.inf, None
        for i in range(C.shape[0]):
            if i not in active and cd[i] < 0.0:
                a = max(slack[i], 0.0) / -cd[i]
                if a < alpha_max:
                    alpha_max, block = a, i
        alpha = min(1.0, alpha_max)
        accepted = False
        while alpha > 1e-16:
            xn = x + alpha * d
            hit = block is not None and alpha == alpha_max
            if hit:
                c = C[block]
                xn = xn - (c @ xn) / (c @ c) * c
            if np.all(C @ xn >= -1e-12):
                fn = value(xn)
                if np.isfinite(fn) and fn >= f + 1e-4 * alpha * dec:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            if dec <= 1e3 * floor:
                converged = True
                message = "converged (no further improvement at rounding level)"
            else:
                message = "line search failed"
            break
        x, f = xn, fn
        if hit:
            active.add(int(block))
        if float(np.max(np.abs(x))) > xmax:
            g, _ = derivatives(x)
            return NewtonResult(x, f, g, tuple(sorted(active)), it, False, True,
                                "coefficients diverged")

    return NewtonResult(x, f, g, tuple(sorted(active)), it, converged, False, message)
