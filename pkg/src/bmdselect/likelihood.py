"""Binomial likelihood, constrained maximum likelihood and information criteria.

The same concave objective ``sum_j a_j ln pi_j + b_j ln(1 - pi_j)`` serves two
purposes: with ``(a, b) = (Y, N - Y)`` it is the log-likelihood, and with
pseudo-counts ``(N pi~, N (1 - pi~))`` it is the Kullback-Leibler objective
whose maximizer is the projection of a target onto a model class.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit, log_expit

from ._newton import maximize_concave
from .data import QuantalDataset
from .errors import NonConvergence, SeparationDetected
from .models import Family, ModelSpec, _as_beta, design_matrix, probabilities
from .nonparametric import empirical_probs, pava

LIKELIHOOD_EPS = 1e-10
SEPARATION_BOUND = 1e3

# Interior margin used when a multistage start must be made strictly feasible.
_START_MARGIN = 1e-3


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

def _xlogy(a: NDArray[np.float64], logp: NDArray[np.float64]) -> NDArray[np.float64]:
    """``a * logp`` with the convention ``0 * log 0 = 0``."""
    out = np.zeros_like(a)
    mask = a != 0.0
    out[mask] = a[mask] * logp[mask]
    return out


def log_probs(spec: ModelSpec, eta: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """``(ln pi, ln(1 - pi))`` evaluated stably from the linear predictor."""
    if spec.family is Family.LOGISTIC:
        return log_expit(eta), log_expit(-eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = np.where(eta > 0.0, np.log(-np.expm1(-np.maximum(eta, 0.0))), -np.inf)
    return lp, -eta


@dataclass(frozen=True)
class BinomialObjective:
    """``sum_j a_j ln pi_j + b_j ln(1 - pi_j)`` over a fixed design."""

    spec: ModelSpec
    X: NDArray[np.float64]
    a: NDArray[np.float64]
    b: NDArray[np.float64]

    @classmethod
    def from_counts(cls, spec: ModelSpec, doses: ArrayLike, a: ArrayLike, b: ArrayLike) -> "BinomialObjective":
        return cls(spec, design_matrix(doses, spec.order), np.asarray(a, float), np.asarray(b, float))

    def value(self, beta: NDArray[np.float64]) -> float:
        eta = self.X @ beta
        lp, lq = log_probs(self.spec, eta)
        return float(np.sum(_xlogy(self.a, lp)) + np.sum(_xlogy(self.b, lq)))

    def derivatives(self, beta: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        eta = self.X @ beta
        if self.spec.family is Family.LOGISTIC:
            p = expit(eta)
            d1 = self.a - (self.a + self.b) * p
            d2 = -(self.a + self.b) * p * (1.0 - p)
        else:
            pbar = np.exp(-eta)
            p = -np.expm1(-eta)
            with np.errstate(divide="ignore", invalid="ignore"):
                d1 = np.where(self.a != 0.0, self.a * pbar / p, 0.0) - self.b
                d2 = np.where(self.a != 0.0, -self.a * pbar / p**2, 0.0)
        g = self.X.T @ d1
        H = (self.X * d2[:, None]).T @ self.X
        return g, H

    @property
    def constraints(self) -> NDArray[np.float64] | None:
        return self.X if self.spec.family is Family.MULTISTAGE else None


def log_likelihood(data: QuantalDataset, spec: ModelSpec, beta: ArrayLike) -> float:
    """Binomial log-likelihood (without the constant binomial coefficients).

    ``ln pi`` and ``ln(1 - pi)`` are floored at ``ln(1e-10)``; a term whose
    count is zero contributes nothing even when its probability is 0 or 1.
    """
    b = _as_beta(spec, beta)
    p = probabilities(spec, b, data.doses)
    y = data.events.astype(float)
    f = (data.subjects - data.events).astype(float)
    # Each logarithm is clamped only where its argument approaches zero.
    lp = np.log(np.maximum(p, LIKELIHOOD_EPS))
    lq = np.log1p(-np.minimum(p, 1.0 - LIKELIHOOD_EPS))
    return float(np.sum(_xlogy(y, lp)) + np.sum(_xlogy(f, lq)))


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FittedModel:
    """Maximum-likelihood fit of one model class.

    ``boundary`` lists design-dose indices where the multistage constraint
    ``x(d_j) . beta >= 0`` is active.
    """

    spec: ModelSpec
    beta_hat: NDArray[np.float64]
    loglik: float
    aic: float
    bic: float
    converged: bool
    iterations: int
    n_total: int
    boundary: tuple[int, ...] = ()
    separated: bool = False
    message: str = field(default="", compare=False)

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    def criterion(self, name: str) -> float:
        key = name.upper()
        if key == "AIC":
            return self.aic
        if key == "BIC":
            return self.bic
        raise ValueError(f"unknown information criterion {name!r}")


def information_criteria(loglik: float, n_params: int, n_total: int) -> tuple[float, float]:
    """``(AIC, BIC) = (-2 l + 2 g, -2 l + g ln n)``."""
    return -2.0 * loglik + 2.0 * n_params, -2.0 * loglik + n_params * math.log(n_total)


def make_feasible(spec: ModelSpec, beta: ArrayLike, doses: ArrayLike, margin: float = 0.0) -> NDArray[np.float64]:
    """Shift the intercept so a multistage predictor is at least ``margin`` at every dose."""
    b = np.array(beta, dtype=float)
    if spec.family is Family.MULTISTAGE:
        low = float(np.min(design_matrix(doses, spec.order) @ b))
        if low < margin:
            b[0] += margin - low
    return b


def default_starts(spec: ModelSpec, doses: ArrayLike, probs: ArrayLike, weights: ArrayLike) -> list[NDArray[np.float64]]:
    """Link-transformed isotonic proportions regressed on the dose basis, and zero."""
    d = np.asarray(doses, float)
    w = np.asarray(weights, float)
    p = pava(np.asarray(probs, float), w)
    lo = 0.5 / max(float(w.max()), 1.0)
    p = np.clip(p, lo, 1.0 - lo)
    z = np.log(p / (1.0 - p)) if spec.family is Family.LOGISTIC else -np.log1p(-p)
    X = design_matrix(d, spec.order)
    sw = np.sqrt(w)
    reg = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)[0]
    starts = [reg, np.zeros(spec.n_params)]
    if spec.family is Family.MULTISTAGE:
        starts = [make_feasible(spec, s, d, _START_MARGIN) for s in starts]
    return starts


def maximize_binomial(
    objective: BinomialObjective,
    starts: Iterable[ArrayLike],
    doses: ArrayLike,
    max_iter: int = 500,
    gtol: float = 1e-9,
):
    """Run the active-set Newton solver from each start; return the best result."""
    best = None
    for s in starts:
        x0 = make_feasible(objective.spec, s, doses, 0.0)
        if not np.isfinite(objective.value(x0)):
            x0 = make_feasible(objective.spec, s, doses, _START_MARGIN)
            if not np.isfinite(objective.value(x0)):
                continue
        res = maximize_concave(
            objective.value, objective.derivatives, x0, objective.constraints,
            gtol=gtol, max_iter=max_iter, xmax=SEPARATION_BOUND,
        )
        if best is None or (res.converged, res.value) > (best.converged, best.value):
            best = res
    return best


def fit_mle(
    data: QuantalDataset,
    spec: ModelSpec,
    starts: Sequence[ArrayLike] | None = None,
) -> FittedModel:
    """Maximum-likelihood fit of ``spec`` to ``data``.

    Multistage fits respect ``x(d_j) . beta >= 0`` at every design dose.
    Several starts are tried (the defaults of :func:`default_starts` plus any
    supplied) and the best is kept. Failure never raises: the best incumbent
    is returned with ``converged=False`` and a :class:`NonConvergence` warning.
    """
    y = data.events.astype(float)
    f = (data.subjects - data.events).astype(float)
    obj = BinomialObjective.from_counts(spec, data.doses, y, f)
    all_starts = default_starts(spec, data.doses, empirical_probs(data), data.subjects)
    if starts:
        all_starts.extend(_as_beta(spec, s) for s in starts)
    res = maximize_binomial(obj, all_starts, data.doses)
    if res is None:
        raise RuntimeError("no start has a finite likelihood")  # unreachable: zero start is always finite

    beta = res.x
    if spec.family is Family.MULTISTAGE:
        beta = make_feasible(spec, beta, data.doses, 0.0)
    separated = bool(res.diverged) or (
        spec.family is Family.LOGISTIC and float(np.max(np.abs(beta))) > SEPARATION_BOUND
    )
    converged = bool(res.converged) and not separated
    if separated:
        warnings.warn(f"{spec.label}: coefficients exceed {SEPARATION_BOUND:g}; data appear separated",
                      SeparationDetected, stacklevel=2)
    elif not converged:
        warnings.warn(f"{spec.label}: maximum likelihood did not converge ({res.message})",
                      NonConvergence, stacklevel=2)
    ll = log_likelihood(data, spec, beta)
    aic, bic = information_criteria(ll, spec.n_params, data.n_total)
    boundary: tuple[int, ...] = ()
    if spec.family is Family.MULTISTAGE:
        eta = design_matrix(data.doses, spec.order) @ beta
        boundary = tuple(int(j) for j in np.flatnonzero(eta <= 1e-12))
    return FittedModel(spec, beta, ll, aic, bic, converged, res.iterations, data.n_total,
                       boundary, separated, res.message)


def fit_all(data: QuantalDataset, specs: Iterable[ModelSpec]) -> dict[ModelSpec, FittedModel]:
    """Fit every model class in ``specs``; keys keep the given order."""
    return {s: fit_mle(data, s) for s in specs}
