"""One-call evaluation of every BMD estimator and model selector on a dataset."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

from .data import QuantalDataset
from .errors import BmdError
from .focused import (
    Design,
    FicVariant,
    Projections,
    RiskMatrix,
    fic_select,
    project_all,
    risk_matrix_from_projections,
)
from .likelihood import FittedModel, fit_all
from .models import CANONICAL_MODELS, BmdEstimate, GradientForm, ModelSpec, bmd
from .nonparametric import PavaFit, nonpar_bmd, nonpar_bmd_value
from .selection import model_averaged_bmd, select_ic, two_step_bmd

ESTIMATORS: tuple[str, ...] = ("FIC1", "FIC2", "FIC3", "AIC", "BIC", "AICModAve", "BICModAve", "NONPAR")
SELECTORS: tuple[str, ...] = ("FIC1", "FIC2", "FIC3", "AIC", "BIC")
DEFAULT_BMRS: tuple[float, ...] = (0.01, 0.05, 0.10)

_FIC = {"FIC1": FicVariant.FE, "FIC2": FicVariant.FM, "FIC3": FicVariant.EMP}


@dataclass(frozen=True)
class Failure:
    """Why an estimator or selector produced no answer."""

    name: str
    q: float
    reason: str

    def __str__(self) -> str:
        return self.reason


Outcome = Union[BmdEstimate, Failure]


def normalize_estimator(name: str) -> str:
    for e in ESTIMATORS:
        if e.upper() == name.strip().upper():
            return e
    raise ValueError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")


@dataclass(frozen=True, eq=False)
class Analysis:
    """Fits, selections and BMD estimates for one dataset."""

    data: QuantalDataset
    fits: Mapping[ModelSpec, FittedModel]
    pava: PavaFit
    q_values: tuple[float, ...]
    estimates: Mapping[tuple[str, float], Outcome]
    selections: Mapping[tuple[str, float], Union[ModelSpec, Failure]]
    risk_matrices: Mapping[float, RiskMatrix] = field(default_factory=dict)


def _guard(name: str, q: float, fn) -> Outcome:
    try:
        return fn()
    except (BmdError, ValueError) as exc:
        return Failure(name, q, f"{type(exc).__name__}: {exc}")


def analyze(
    data: QuantalDataset,
    q_values: Sequence[float] = DEFAULT_BMRS,
    models: Iterable[ModelSpec] = CANONICAL_MODELS,
    estimators: Iterable[str] = ESTIMATORS,
    gradient_form: GradientForm = "reference",
) -> Analysis:
    """Fit the model classes and evaluate the requested estimators at each BMR.

    Failures of individual estimators are recorded as :class:`Failure`
    values rather than raised. KL projections are computed once and shared
    across BMRs.
    """
    est = tuple(normalize_estimator(e) for e in estimators)
    qs = tuple(float(q) for q in q_values)
    fits = fit_all(data, sorted(set(models)))
    fit_list = list(fits.values())
    pava_fit = PavaFit.from_data(data)
    top = float(data.doses[-1])
    scale = data.scale

    estimates: dict[tuple[str, float], Outcome] = {}
    selections: dict[tuple[str, float], Union[ModelSpec, Failure]] = {}
    matrices: dict[float, RiskMatrix] = {}

    for crit in ("AIC", "BIC"):
        try:
            chosen: Union[ModelSpec, Failure] = select_ic(fit_list, crit)
        except BmdError as exc:
            chosen = Failure(crit, float("nan"), f"{type(exc).__name__}: {exc}")
        for q in qs:
            selections[(crit, q)] = chosen

    need_fic = any(e in _FIC for e in est)
    proj: Projections | None = None
    if need_fic:
        proj = project_all(Design.from_data(data), fit_list, pava_fit)

    for q in qs:
        if proj is not None:
            try:
                anchor = nonpar_bmd_value(pava_fit, q)
                matrices[q] = risk_matrix_from_projections(proj, anchor, q, gradient_form)
            except BmdError as exc:
                reason = f"{type(exc).__name__}: {exc}"
                for name in _FIC:
                    selections[(name, q)] = Failure(name, q, reason)
            else:
                for name, variant in _FIC.items():
                    try:
                        selections[(name, q)] = fic_select(matrices[q], variant)
                    except BmdError as exc:
                        selections[(name, q)] = Failure(name, q, f"{type(exc).__name__}: {exc}")

        for name in est:
            if name in _FIC:
                sel = selections[(name, q)]
                if isinstance(sel, Failure):
                    estimates[(name, q)] = sel
                else:
                    beta = fits[sel].beta_hat
                    estimates[(name, q)] = _guard(
                        name, q, lambda s=sel, b=beta: BmdEstimate(q, bmd(s, b, q, top), name, s, scale)
                    )
            elif name in ("AIC", "BIC"):
                estimates[(name, q)] = _guard(name, q, lambda c=name: two_step_bmd(fit_list, c, q, top, scale))
            elif name.endswith("ModAve"):
                crit = name[:3]
                estimates[(name, q)] = _guard(name, q, lambda c=crit: model_averaged_bmd(fit_list, c, q, top, scale))
            else:
                estimates[(name, q)] = _guard(name, q, lambda: nonpar_bmd(pava_fit, q))

    return Analysis(data, fits, pava_fit, qs, estimates, selections, matrices)
