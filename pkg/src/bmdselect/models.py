"""Parametric quantal dose-response classes and their benchmark doses.

Two families are supported, each with a polynomial dose basis
``x(d) = (1, d, ..., d^p)`` of order ``p``:

* logistic (``LGp``):    pi(d) = expit(x(d) . beta)
* multistage (``MSp``):  pi(d) = 1 - exp(-x(d) . beta), with x(d_j) . beta >= 0
  at every design dose.

Everything here is a pure function of ``(spec, beta, dose)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from .errors import BmrUnattainable, DegenerateCurve, FlatDoseResponseAtBmd

GradientForm = Literal["exact", "reference"]

# Bracket for the BMD root search, as a multiple of the largest design dose.
BMD_SEARCH_FACTOR = 10.0
_GRID_POINTS = 64


class Family(enum.Enum):
    LOGISTIC = "LG"
    MULTISTAGE = "MS"


@dataclass(frozen=True)
class ModelSpec:
    """Model class identity: a family and a polynomial order ``p >= 1``."""

    family: Family
    order: int

    def __post_init__(self) -> None:
        if not isinstance(self.order, (int, np.integer)) or self.order < 1:
            raise ValueError(f"model order must be a positive integer, got {self.order!r}")

    @property
    def label(self) -> str:
        return f"{self.family.value}{self.order}"

    @property
    def n_params(self) -> int:
        return self.order + 1

    @property
    def sort_key(self) -> tuple[int, int]:
        return (0 if self.family is Family.LOGISTIC else 1, self.order)

    @classmethod
    def parse(cls, label: str) -> "ModelSpec":
        """Parse labels such as ``"LG1"`` or ``"ms2"``."""
        text = label.strip().upper()
        for fam in Family:
            if text.startswith(fam.value) and text[len(fam.value):].isdigit():
                return cls(fam, int(text[len(fam.value):]))
        raise ValueError(f"unknown model label {label!r}")

    def __lt__(self, other: "ModelSpec") -> bool:
        return self.sort_key < other.sort_key

    def __str__(self) -> str:
        return self.label


LG1 = ModelSpec(Family.LOGISTIC, 1)
LG2 = ModelSpec(Family.LOGISTIC, 2)
MS1 = ModelSpec(Family.MULTISTAGE, 1)
MS2 = ModelSpec(Family.MULTISTAGE, 2)
CANONICAL_MODELS: tuple[ModelSpec, ...] = (LG1, LG2, MS1, MS2)


Provenance = Union[ModelSpec, Mapping[ModelSpec, float], str]


@dataclass(frozen=True)
class BmdEstimate:
    """A benchmark dose produced by one estimator at one BMR.

    ``dose`` is in the (standardized) units the data were analysed in;
    ``scale`` converts back to original units.
    """

    q: float
    dose: float
    estimator: str
    provenance: Provenance = field(compare=False)
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"BMR must lie in (0, 1), got {self.q}")
        if not self.dose >= 0.0:
            raise ValueError(f"BMD must be non-negative, got {self.dose}")

    @property
    def dose_original(self) -> float:
        return self.dose * self.scale

    def describe_provenance(self) -> str:
        prov = self.provenance
        if isinstance(prov, ModelSpec):
            return prov.label
        if isinstance(prov, Mapping):
            return ";".join(f"{m.label}={w:.4f}" for m, w in sorted(prov.items()))
        return str(prov)


# ---------------------------------------------------------------------------
# Dose basis and linear predictor
# ---------------------------------------------------------------------------

def dose_vector(d: float, order: int) -> NDArray[np.float64]:
    """``(1, d, d^2, ..., d^order)``."""
    return float(d) ** np.arange(order + 1, dtype=float)


def design_matrix(doses: ArrayLike, order: int) -> NDArray[np.float64]:
    """Rows ``dose_vector(d_j, order)`` for every dose."""
    return np.vander(np.asarray(doses, dtype=float), order + 1, increasing=True)


def _as_beta(spec: ModelSpec, beta: ArrayLike) -> NDArray[np.float64]:
    b = np.asarray(beta, dtype=float)
    if b.shape != (spec.n_params,):
        raise ValueError(f"{spec.label} needs {spec.n_params} coefficients, got shape {b.shape}")
    return b


def _poly(beta: NDArray[np.float64], d: float) -> float:
    acc = 0.0
    for c in beta[::-1]:
        acc = acc * d + c
    return float(acc)


def _poly_slope(beta: NDArray[np.float64], d: float) -> float:
    """d/dd of x(d) . beta, i.e. sum_j j beta_j d^(j-1)."""
    acc = 0.0
    for j in range(len(beta) - 1, 0, -1):
        acc = acc * d + j * beta[j]
    return float(acc)


def _expit(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _pi_and_complement(spec: ModelSpec, eta: float) -> tuple[float, float]:
    if spec.family is Family.LOGISTIC:
        return _expit(eta), _expit(-eta)
    return -math.expm1(-eta), math.exp(-eta)


def linear_predictor(spec: ModelSpec, beta: ArrayLike, doses: ArrayLike) -> NDArray[np.float64]:
    b = _as_beta(spec, beta)
    return design_matrix(doses, spec.order) @ b


def probabilities(spec: ModelSpec, beta: ArrayLike, doses: ArrayLike) -> NDArray[np.float64]:
    """Vectorised :func:`eval_pi` over an array of doses."""
    eta = linear_predictor(spec, beta, doses)
    if spec.family is Family.LOGISTIC:
        return expit(eta)
    return -np.expm1(-eta)


def is_feasible(spec: ModelSpec, beta: ArrayLike, doses: ArrayLike, tol: float = 1e-12) -> bool:
    """Multistage parameter-space check ``x(d_j) . beta >= -tol``; logistic is unconstrained."""
    if spec.family is Family.LOGISTIC:
        return True
    return bool(np.all(linear_predictor(spec, beta, doses) >= -tol))


# ---------------------------------------------------------------------------
# Dose-response function and derivatives
# ---------------------------------------------------------------------------

def eval_pi(spec: ModelSpec, beta: ArrayLike, d: float) -> float:
    """Probability of response at dose ``d``."""
    b = _as_beta(spec, beta)
    return _pi_and_complement(spec, _poly(b, float(d)))[0]


def _link_derivative(spec: ModelSpec, eta: float) -> float:
    """d pi / d eta."""
    p, pbar = _pi_and_complement(spec, eta)
    return p * pbar if spec.family is Family.LOGISTIC else pbar


def grad_pi(spec: ModelSpec, beta: ArrayLike, d: float) -> NDArray[np.float64]:
    """Gradient of ``pi(d; beta)`` with respect to ``beta``."""
    b = _as_beta(spec, beta)
    return _link_derivative(spec, _poly(b, float(d))) * dose_vector(d, spec.order)


def hess_pi(spec: ModelSpec, beta: ArrayLike, d: float) -> NDArray[np.float64]:
    """Hessian of ``pi(d; beta)`` with respect to ``beta`` (not negated)."""
    b = _as_beta(spec, beta)
    p, pbar = _pi_and_complement(spec, _poly(b, float(d)))
    x = dose_vector(d, spec.order)
    if spec.family is Family.LOGISTIC:
        curv = p * pbar * (1.0 - 2.0 * p)
    else:
        curv = -pbar
    return curv * np.outer(x, x)


def dpi_ddose(spec: ModelSpec, beta: ArrayLike, d: float) -> float:
    """Slope of the dose-response curve in dose."""
    b = _as_beta(spec, beta)
    return _link_derivative(spec, _poly(b, float(d))) * _poly_slope(b, float(d))


# ---------------------------------------------------------------------------
# Extra risk and BMD
# ---------------------------------------------------------------------------

def _extra_risk_b(spec: ModelSpec, b: NDArray[np.float64], d: float, eta0: float) -> float:
    eta = _poly(b, d)
    if spec.family is Family.MULTISTAGE:
        # (pi(d) - pi(0)) / (1 - pi(0)) = 1 - exp(-(eta(d) - eta(0)))
        return -math.expm1(-(eta - eta0))
    p0, p0bar = _pi_and_complement(spec, eta0)
    p = _pi_and_complement(spec, eta)[0]
    return (p - p0) / p0bar


def extra_risk(spec: ModelSpec, beta: ArrayLike, d: float) -> float:
    """``(pi(d) - pi(0)) / (1 - pi(0))``."""
    b = _as_beta(spec, beta)
    eta0 = float(b[0])
    if _pi_and_complement(spec, eta0)[1] <= 0.0:
        raise DegenerateCurve("background probability is 1; extra risk undefined")
    return _extra_risk_b(spec, b, float(d), eta0)


def bmd(spec: ModelSpec, beta: ArrayLike, q: float, max_design_dose: float = 1.0) -> float:
    """Smallest dose whose extra risk reaches ``q``.

    The search starts on ``[0, max_design_dose]`` and doubles the upper end
    up to ``BMD_SEARCH_FACTOR * max_design_dose``. A coarse grid locates the
    first bracket where the extra risk reaches ``q`` (curves of order >= 2 need
    not be monotone), then bisection refines it to machine precision.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"BMR must lie in (0, 1), got {q}")
    b = _as_beta(spec, beta)
    if not np.any(b[1:] != 0.0):
        raise DegenerateCurve(f"{spec.label} curve is constant in dose")
    eta0 = float(b[0])
    if _pi_and_complement(spec, eta0)[1] <= 0.0:
        raise DegenerateCurve("background probability is 1; extra risk undefined")

    def f(x: float) -> float:
        return _extra_risk_b(spec, b, x, eta0) - q

    cap = BMD_SEARCH_FACTOR * max_design_dose
    hi = max_design_dose
    while True:
        grid = np.linspace(0.0, hi, _GRID_POINTS + 1)
        vals = np.array([f(x) for x in grid[1:]])
        hit = np.flatnonzero(vals >= 0.0)
        if hit.size:
            k = int(hit[0])
            lo, up = float(grid[k]), float(grid[k + 1])
            break
        if hi >= cap:
            raise BmrUnattainable(
                f"{spec.label} extra risk stays below {q} on [0, {cap:g}]"
            )
        hi = min(2.0 * hi, cap)

    for _ in range(200):
        mid = 0.5 * (lo + up)
        if mid <= lo or mid >= up:
            break
        if f(mid) >= 0.0:
            up = mid
        else:
            lo = mid
    return up if abs(f(up)) <= abs(f(lo)) else lo


def bmd_gradient(
    spec: ModelSpec,
    beta: ArrayLike,
    q: float,
    form: GradientForm = "exact",
    max_design_dose: float = 1.0,
) -> NDArray[np.float64]:
    """Gradient of the BMD with respect to ``beta``.

    Implicit differentiation of ``pi_E(tau) = q`` gives::

        tau_dot = [(1 - q) grad pi(0) - grad pi(tau)] / (d pi / d dose)(tau)

    which in closed form is, for logistic curves,
    ``(qbar pi0 pibar0 e_0 - pi_tau pibar_tau x(tau)) / (slope * pi_tau pibar_tau)``
    with ``pi_tau = q + qbar pi0``, and for multistage curves
    ``(e_0 - x(tau)) / slope`` where ``slope = sum_j j beta_j tau^(j-1)``.

    ``form="reference"`` changes only the multistage case: the second
    numerator term is weighted by ``pi(tau) = 1 - qbar exp(-beta_0)`` instead of
    ``1 - pi(tau)``. That expression is *not* the derivative of the BMD, but it
    is the one under which the focused selectors reproduce the reference BCME
    selections and simulation rates, so the risk machinery can opt into it.
    """
    b = _as_beta(spec, beta)
    tau = bmd(spec, b, q, max_design_dose)
    slope = _poly_slope(b, tau)
    # Near a tangency the bisection root is only accurate to about sqrt(eps), so
    # slopes within that noise of zero are treated as flat.
    size = sum(j * abs(b[j]) * max(tau, 1.0) ** (j - 1) for j in range(1, b.size))
    if not math.isfinite(slope) or abs(slope) <= 1e-7 * size:
        raise FlatDoseResponseAtBmd(f"{spec.label} has zero slope at its BMD {tau:g}")
    x_tau = dose_vector(tau, spec.order)
    e0 = np.zeros(spec.n_params)
    e0[0] = 1.0
    qbar = 1.0 - q
    if spec.family is Family.LOGISTIC:
        p0 = _expit(b[0])
        p_tau = q + qbar * p0
        w0 = p0 * (1.0 - p0)
        w_tau = p_tau * (1.0 - p_tau)
        return (qbar * w0 * e0 - w_tau * x_tau) / (slope * w_tau)
    pbar0 = math.exp(-b[0])
    pbar_tau = qbar * pbar0
    if form == "exact":
        return (e0 - x_tau) / slope
    if form == "reference":
        p_tau = 1.0 - pbar_tau
        return (qbar * pbar0 * e0 - p_tau * x_tau) / (slope * pbar_tau)
    raise ValueError(f"unknown gradient form {form!r}")
