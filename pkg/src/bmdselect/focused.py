"""Focused model selection for the BMD.

Each candidate class ``M`` is judged by an estimate of the decision-theoretic
risk of its BMD estimator under an assumed truth ``P~``::

    R(M, P~) = Gamma + n * (tau_M(theta*) - tau_emp)^2

where ``theta*`` is the Kullback-Leibler projection of ``P~`` onto ``M``,
``Gamma = tau_dot' Xi tau_dot`` is the sandwich variance of the BMD, and the
bias is measured against the isotonic (PAVA) BMD. The assumed truths are the
fitted parametric curves and the isotonic curve itself; three selectors read
different parts of the resulting risk matrix.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .data import QuantalDataset
from .errors import BmdError, ProjectionFailed, SingularInformation
from .likelihood import BinomialObjective, FittedModel, default_starts, maximize_binomial
from .models import (
    BmdEstimate,
    Family,
    GradientForm,
    ModelSpec,
    _as_beta,
    bmd,
    bmd_gradient,
    design_matrix,
    grad_pi,
    hess_pi,
    probabilities,
)
from .nonparametric import PavaFit, nonpar_bmd_value

KL_EPS = 1e-8
EMPIRICAL = "EMP"
# Condition number above which the information matrix is treated as singular.
MAX_CONDITION = 1e15

Column = Union[ModelSpec, str]


class FicVariant(enum.Enum):
    """The three focused selectors.

    ``FE`` picks the estimator row holding the smallest model-based risk,
    ``FM`` picks the assumed-truth column holding it, and ``EMP`` minimises
    the risk under the empirical (isotonic) truth.
    """

    FE = "FIC1"
    FM = "FIC2"
    EMP = "FIC3"

    @classmethod
    def parse(cls, text: str) -> "FicVariant":
        key = text.strip().upper()
        for v in cls:
            if key in (v.name, v.value):
                return v
        raise ValueError(f"unknown focused selector {text!r}")


# ---------------------------------------------------------------------------
# Design and targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Design:
    """Dose levels and group sizes, without outcomes."""

    doses: NDArray[np.float64]
    subjects: NDArray[np.float64]

    def __post_init__(self) -> None:
        d = np.asarray(self.doses, dtype=float)
        n = np.asarray(self.subjects, dtype=float)
        if d.shape != n.shape or d.ndim != 1 or d.size == 0:
            raise ValueError("doses and subjects must be 1-d arrays of equal length")
        object.__setattr__(self, "doses", d)
        object.__setattr__(self, "subjects", n)

    @classmethod
    def from_data(cls, data: QuantalDataset) -> "Design":
        return cls(data.doses, data.subjects.astype(float))

    @property
    def n_total(self) -> float:
        return float(self.subjects.sum())

    @property
    def max_dose(self) -> float:
        return float(self.doses[-1])


@dataclass(frozen=True, eq=False)
class TargetDistribution:
    """An assumed true dose-response, known through its design-dose probabilities.

    ``clamp`` controls whether ``probs`` are moved into ``[KL_EPS, 1 - KL_EPS]``
    when the information and covariance matrices are assembled. Targets built
    from parametric fits are clamped; the empirical target is not, so that a
    dose with an observed proportion of exactly 0 or 1 carries no weight.
    """

    probs: NDArray[np.float64]
    source: Column
    bmd_fn: Callable[[float], float] | None = field(default=None, repr=False)
    clamp: bool = True

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(~np.isfinite(p)) or np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise ValueError("target probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", np.clip(p, 0.0, 1.0))

    @classmethod
    def from_fit(cls, fit: FittedModel, design: Design) -> "TargetDistribution":
        spec, beta = fit.spec, fit.beta_hat
        top = design.max_dose
        return cls(
            probabilities(spec, beta, design.doses),
            spec,
            lambda q: bmd(spec, beta, q, top),
            clamp=True,
        )

    @classmethod
    def from_model(cls, spec: ModelSpec, beta: ArrayLike, design: Design) -> "TargetDistribution":
        b = _as_beta(spec, beta)
        top = design.max_dose
        return cls(probabilities(spec, b, design.doses), spec, lambda q: bmd(spec, b, q, top), True)

    @classmethod
    def from_pava(cls, fit: PavaFit) -> "TargetDistribution":
        return cls(fit.probs.copy(), EMPIRICAL, lambda q: nonpar_bmd_value(fit, q), clamp=False)

    def matrix_probs(self) -> NDArray[np.float64]:
        return np.clip(self.probs, KL_EPS, 1.0 - KL_EPS) if self.clamp else self.probs


def _model_probs(spec: ModelSpec, beta: NDArray[np.float64], design: Design) -> NDArray[np.float64]:
    return np.clip(probabilities(spec, beta, design.doses), KL_EPS, 1.0 - KL_EPS)


# ---------------------------------------------------------------------------
# Kullback-Leibler objective and derivatives
# ---------------------------------------------------------------------------

def kl_objective(design: Design, target: TargetDistribution, spec: ModelSpec, beta: ArrayLike) -> float:
    """``K = sum_j N_j [pi~_j ln pi_j + (1 - pi~_j) ln(1 - pi_j)]``, ``pi_j`` clamped."""
    b = _as_beta(spec, beta)
    p = _model_probs(spec, b, design)
    t = target.probs
    return float(np.sum(design.subjects * (t * np.log(p) + (1.0 - t) * np.log1p(-p))))


def kl_score(design: Design, target: TargetDistribution, spec: ModelSpec, beta: ArrayLike) -> NDArray[np.float64]:
    """Gradient of :func:`kl_objective`."""
    b = _as_beta(spec, beta)
    p = _model_probs(spec, b, design)
    X = design_matrix(design.doses, spec.order)
    r = design.subjects * (target.probs - p)
    if spec.family is Family.LOGISTIC:
        return X.T @ r
    return X.T @ (r / p)


def kl_info(design: Design, target: TargetDistribution, spec: ModelSpec, beta: ArrayLike) -> NDArray[np.float64]:
    """Negative Hessian of :func:`kl_objective` in closed form.

    Logistic: ``sum N p (1-p) D``, which does not involve the target.
    Multistage: ``sum N pi~ (1-p) / p^2 D``.
    """
    b = _as_beta(spec, beta)
    p = _model_probs(spec, b, design)
    X = design_matrix(design.doses, spec.order)
    if spec.family is Family.LOGISTIC:
        w = design.subjects * p * (1.0 - p)
    else:
        w = design.subjects * target.matrix_probs() * (1.0 - p) / p**2
    return (X * w[:, None]).T @ X


def score_covariance(design: Design, target: TargetDistribution, spec: ModelSpec, beta: ArrayLike) -> NDArray[np.float64]:
    """Covariance of the score under the target, in closed form.

    Logistic: ``sum N pi~ (1-pi~) D``; multistage: ``sum N pi~ (1-pi~) / p^2 D``.
    """
    b = _as_beta(spec, beta)
    X = design_matrix(design.doses, spec.order)
    t = target.matrix_probs()
    w = design.subjects * t * (1.0 - t)
    if spec.family is Family.MULTISTAGE:
        w = w / _model_probs(spec, b, design) ** 2
    return (X * w[:, None]).T @ X


def kl_info_generic(design: Design, target: TargetDistribution, spec: ModelSpec, beta: ArrayLike) -> NDArray[np.float64]:
    """Negative Hessian of ``K`` assembled from ``grad_pi`` and ``hess_pi``.

    Valid for any family; used to cross-check :func:`kl_info`.
    """
    b = _as_beta(spec, beta)
    p = _model_probs(spec, b, design)
    t = target.matrix_probs()
    out = np.zeros((spec.n_params, spec.n_params))
    for j, d in enumerate(design.doses):
        g = grad_pi(spec, b, d)
        h = hess_pi(spec, b, d)
        outer = t[j] / p[j] ** 2 + (1.0 - t[j]) / (1.0 - p[j]) ** 2
        first = t[j] / p[j] - (1.0 - t[j]) / (1.0 - p[j])
        out += design.subjects[j] * (outer * np.outer(g, g) - first * h)
    return out


def score_covariance_generic(design: Design, target: TargetDistribution, spec: ModelSpec, beta: ArrayLike) -> NDArray[np.float64]:
    """``sum N pi~ (1-pi~) / [p (1-p)]^2 grad_pi grad_pi'`` for any family."""
    b = _as_beta(spec, beta)
    p = _model_probs(spec, b, design)
    t = target.matrix_probs()
    out = np.zeros((spec.n_params, spec.n_params))
    for j, d in enumerate(design.doses):
        g = grad_pi(spec, b, d)
        out += design.subjects[j] * t[j] * (1.0 - t[j]) / (p[j] * (1.0 - p[j])) ** 2 * np.outer(g, g)
    return out


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

def kl_project(
    design: Design,
    target: TargetDistribution,
    spec: ModelSpec,
    starts: Sequence[ArrayLike] = (),
    max_iter: int = 500,
) -> NDArray[np.float64]:
    """Maximizer ``theta*`` of the KL objective over ``spec``'s parameter space.

    The objective is concave, so damped Newton steps with an active set for
    the multistage constraints reach the global maximum. At a constrained
    solution the score vanishes along the free directions only.

    Raises
    ------
    ProjectionFailed
        If no start converges within ``max_iter`` iterations.
    """
    n = design.subjects
    t = target.probs
    obj = BinomialObjective.from_counts(spec, design.doses, n * t, n * (1.0 - t))
    all_starts = [_as_beta(spec, s) for s in starts]
    all_starts += default_starts(spec, design.doses, t, n)
    res = maximize_binomial(obj, all_starts, design.doses, max_iter=max_iter)
    if res is None or not res.converged:
        why = "no feasible start" if res is None else res.message
        raise ProjectionFailed(f"projection onto {spec.label} failed: {why}")
    beta = res.x
    if spec.family is Family.MULTISTAGE:
        low = float(np.min(design_matrix(design.doses, spec.order) @ beta))
        if low < 0.0:
            beta = beta.copy()
            beta[0] -= low
    return beta


# ---------------------------------------------------------------------------
# Risk
# ---------------------------------------------------------------------------

def sandwich(design: Design, target: TargetDistribution, spec: ModelSpec, beta: ArrayLike) -> NDArray[np.float64]:
    """``Xi = A_n^-1 Sigma_n A_n^-1`` with ``A_n = A / n`` and ``Sigma_n = Sigma / n``."""
    A = kl_info(design, target, spec, beta)
    S = score_covariance(design, target, spec, beta)
    _check_invertible(A, spec)
    Ainv = np.linalg.inv(A)
    Xi = design.n_total * (Ainv @ S @ Ainv)
    return 0.5 * (Xi + Xi.T)


def _check_invertible(A: NDArray[np.float64], spec: ModelSpec) -> None:
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > MAX_CONDITION:
        raise SingularInformation(f"information matrix for {spec.label} is singular")


def gamma_hat(
    design: Design,
    target: TargetDistribution,
    spec: ModelSpec,
    q: float,
    theta: ArrayLike | None = None,
    gradient_form: GradientForm = "reference",
) -> float:
    """Sandwich variance ``tau_dot' Xi tau_dot`` of the BMD at the projection.

    ``theta`` defaults to :func:`kl_project` of the target onto ``spec``.
    ``gradient_form`` is passed to :func:`bmd_gradient`.
    """
    beta = kl_project(design, target, spec) if theta is None else _as_beta(spec, theta)
    A = kl_info(design, target, spec, beta)
    S = score_covariance(design, target, spec, beta)
    _check_invertible(A, spec)
    tdot = bmd_gradient(spec, beta, q, gradient_form, design.max_dose)
    v = np.linalg.solve(A, tdot)
    return max(float(design.n_total * (v @ S @ v)), 0.0)


def risk_estimate(
    design: Design,
    target: TargetDistribution,
    empirical_bmd: float,
    spec: ModelSpec,
    q: float,
    theta: ArrayLike | None = None,
    gradient_form: GradientForm = "reference",
) -> float:
    """``Gamma + n (tau_M(theta*) - empirical_bmd)^2``."""
    beta = kl_project(design, target, spec) if theta is None else _as_beta(spec, theta)
    g = gamma_hat(design, target, spec, q, beta, gradient_form)
    bias = bmd(spec, beta, q, design.max_dose) - empirical_bmd
    return g + design.n_total * bias * bias


@dataclass(frozen=True, eq=False)
class RiskMatrix:
    """Estimated risks; rows are estimator classes, columns assumed truths.

    ``gamma`` and ``bias_sq`` hold the two addends of each entry (the bias
    already multiplied by ``n``). Failed entries are ``inf`` in ``risk`` and
    described in ``diagnostics``.
    """

    q: float
    rows: tuple[ModelSpec, ...]
    columns: tuple[Column, ...]
    gamma: NDArray[np.float64]
    bias_sq: NDArray[np.float64]
    diagnostics: Mapping[tuple[ModelSpec, Column], str] = field(default_factory=dict)

    @property
    def risk(self) -> NDArray[np.float64]:
        with np.errstate(invalid="ignore"):
            r = self.gamma + self.bias_sq
        return np.where(np.isfinite(r), r, np.inf)

    def entry(self, row: ModelSpec, column: Column) -> float:
        return float(self.risk[self.rows.index(row), self.columns.index(column)])

    def model_columns(self) -> list[int]:
        return [k for k, c in enumerate(self.columns) if isinstance(c, ModelSpec)]

    def scaled(self, factor: float) -> "RiskMatrix":
        return RiskMatrix(self.q, self.rows, self.columns, self.gamma * factor,
                          self.bias_sq * factor, dict(self.diagnostics))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator"] + [_col_label(c) for c in self.columns])
        for i, r in enumerate(self.rows):
            w.writerow([r.label] + [_fmt(v) for v in self.risk[i]])
        return buf.getvalue()


def _col_label(c: Column) -> str:
    return c.label if isinstance(c, ModelSpec) else str(c)


def _fmt(v: float) -> str:
    return "inf" if not math.isfinite(v) else repr(float(v))


@dataclass(frozen=True, eq=False)
class Projections:
    """KL projections for every (estimator class, assumed truth) pair.

    Projections do not depend on the BMR, so one set serves every ``q``.
    """

    design: Design
    fits: tuple[FittedModel, ...]
    targets: tuple[TargetDistribution, ...]
    theta: Mapping[tuple[ModelSpec, Column], NDArray[np.float64]]
    diagnostics: Mapping[tuple[ModelSpec, Column], str]


def project_all(design: Design, fits: Iterable[FittedModel], pava_fit: PavaFit) -> Projections:
    """Project every target (fitted curves plus the isotonic curve) onto every class."""
    usable = tuple(sorted((f for f in fits if f.converged), key=lambda f: f.spec.sort_key))
    targets = tuple(TargetDistribution.from_fit(f, design) for f in usable)
    targets += (TargetDistribution.from_pava(pava_fit),)
    theta: dict[tuple[ModelSpec, Column], NDArray[np.float64]] = {}
    diag: dict[tuple[ModelSpec, Column], str] = {}
    for f in usable:
        for t in targets:
            key = (f.spec, t.source)
            if t.source == f.spec:
                theta[key] = f.beta_hat
                continue
            try:
                theta[key] = kl_project(design, t, f.spec, starts=[f.beta_hat])
            except BmdError as exc:
                diag[key] = f"{type(exc).__name__}: {exc}"
    return Projections(design, usable, targets, theta, diag)


def risk_matrix_from_projections(
    proj: Projections,
    empirical_bmd: float,
    q: float,
    gradient_form: GradientForm = "reference",
) -> RiskMatrix:
    design = proj.design
    rows = tuple(f.spec for f in proj.fits)
    cols = tuple(t.source for t in proj.targets)
    gam = np.full((len(rows), len(cols)), np.inf)
    bsq = np.full((len(rows), len(cols)), np.inf)
    diag = dict(proj.diagnostics)
    for i, spec in enumerate(rows):
        for k, target in enumerate(proj.targets):
            key = (spec, target.source)
            beta = proj.theta.get(key)
            if beta is None:
                continue
            try:
                with np.errstate(all="ignore"):
                    g = gamma_hat(design, target, spec, q, beta, gradient_form)
                    b = bmd(spec, beta, q, design.max_dose) - empirical_bmd
            except (BmdError, np.linalg.LinAlgError) as exc:
                diag[key] = f"{type(exc).__name__}: {exc}"
                continue
            if not math.isfinite(g):
                diag[key] = "non-finite variance"
                continue
            gam[i, k] = g
            bsq[i, k] = design.n_total * b * b
    return RiskMatrix(q, rows, cols, gam, bsq, diag)


def build_risk_matrix(
    data: QuantalDataset,
    fits: Iterable[FittedModel],
    pava_fit: PavaFit,
    q: float,
    gradient_form: GradientForm = "reference",
) -> RiskMatrix:
    """Risk matrix with one column per converged fit plus the empirical column.

    The bias of every entry is measured against the isotonic BMD at ``q``,
    which must therefore exist.
    """
    design = Design.from_data(data)
    proj = project_all(design, fits, pava_fit)
    return risk_matrix_from_projections(proj, nonpar_bmd_value(pava_fit, q), q, gradient_form)


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

def fic_select(matrix: RiskMatrix, variant: FicVariant | str) -> ModelSpec:
    """Model chosen by a focused selector; ties go to the canonically first class.

    Raises
    ------
    BmdError
        If the matrix is empty or every relevant entry failed.
    """
    v = variant if isinstance(variant, FicVariant) else FicVariant.parse(variant)
    if not matrix.rows:
        raise BmdError("risk matrix is empty")
    R = matrix.risk
    order = sorted(range(len(matrix.rows)), key=lambda i: matrix.rows[i].sort_key)
    if v is FicVariant.EMP:
        if EMPIRICAL not in matrix.columns:
            raise BmdError("risk matrix has no empirical column")
        k = matrix.columns.index(EMPIRICAL)
        i = min(order, key=lambda i: R[i, k])
        if not math.isfinite(R[i, k]):
            raise BmdError("every empirical-column risk failed")
        return matrix.rows[i]

    cols = sorted(matrix.model_columns(), key=lambda k: matrix.columns[k].sort_key)
    if not cols:
        raise BmdError("risk matrix has no model-based columns")
    i, k = min(((i, k) for i in order for k in cols), key=lambda ik: R[ik])
    if not math.isfinite(R[i, k]):
        raise BmdError("every model-based risk failed")
    if v is FicVariant.FE:
        return matrix.rows[i]
    return matrix.columns[k]


def fic_bmd(
    data: QuantalDataset,
    fits: Iterable[FittedModel],
    pava_fit: PavaFit,
    variant: FicVariant | str,
    q: float,
    gradient_form: GradientForm = "reference",
    matrix: RiskMatrix | None = None,
) -> BmdEstimate:
    """BMD at the MLE of the class chosen by a focused selector."""
    fits = list(fits)
    v = variant if isinstance(variant, FicVariant) else FicVariant.parse(variant)
    if matrix is None:
        matrix = build_risk_matrix(data, fits, pava_fit, q, gradient_form)
    chosen = fic_select(matrix, v)
    fit = next(f for f in fits if f.spec == chosen and f.converged)
    dose = bmd(chosen, fit.beta_hat, q, float(data.doses[-1]))
    return BmdEstimate(q, dose, v.value, chosen, data.scale)
