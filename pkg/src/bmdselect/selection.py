"""Information-criterion model selection, IC weights, two-step and averaged BMDs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, Mapping

import numpy as np

from .errors import NoConvergedFits
from .likelihood import FittedModel
from .models import BmdEstimate, ModelSpec, bmd

Criterion = Literal["AIC", "BIC"]

WEIGHT_TOLERANCE = 1e-12


def _usable(fits: Iterable[FittedModel]) -> list[FittedModel]:
    ok = sorted((f for f in fits if f.converged), key=lambda f: f.spec.sort_key)
    if not ok:
        raise NoConvergedFits("no converged fit available for selection")
    return ok


def _criterion_name(criterion: str) -> str:
    key = criterion.upper()
    if key not in ("AIC", "BIC"):
        raise ValueError(f"unknown information criterion {criterion!r}")
    return key


@dataclass(frozen=True)
class WeightVector:
    """Non-negative model weights summing to one."""

    weights: Mapping[ModelSpec, float]

    def __post_init__(self) -> None:
        vals = list(self.weights.values())
        if not vals:
            raise ValueError("weight vector is empty")
        if any(w < 0 or not math.isfinite(w) for w in vals):
            raise ValueError("weights must be finite and non-negative")
        if abs(math.fsum(vals) - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"weights sum to {math.fsum(vals)!r}, not 1")
        object.__setattr__(self, "weights", dict(sorted(self.weights.items())))

    def __getitem__(self, spec: ModelSpec) -> float:
        return self.weights.get(spec, 0.0)

    def argmax(self) -> ModelSpec:
        return max(self.weights, key=lambda m: (self.weights[m], [-k for k in m.sort_key]))


def select_ic(fits: Iterable[FittedModel], criterion: Criterion = "AIC") -> ModelSpec:
    """Model with the smallest criterion; ties go to the canonically first label.

    Non-converged fits are ignored.
    """
    key = _criterion_name(criterion)
    ok = _usable(fits)
    return min(ok, key=lambda f: (f.criterion(key), f.spec.sort_key)).spec


def weights_from_values(values: Mapping[ModelSpec, float]) -> WeightVector:
    """Softmax of ``-IC / 2`` after subtracting the minimum for stability."""
    specs = list(values)
    ic = np.array([values[s] for s in specs], dtype=float)
    z = np.exp(-0.5 * (ic - ic.min()))
    w = z / z.sum()
    # Put the rounding residue on the largest weight so the sum is exactly one.
    k = int(np.argmax(w))
    w[k] = 1.0 - math.fsum(np.delete(w, k))
    return WeightVector({s: float(max(v, 0.0)) for s, v in zip(specs, w)})


def ic_weights(fits: Iterable[FittedModel], criterion: Criterion = "AIC") -> WeightVector:
    """Akaike (or BIC) weights over the converged fits."""
    key = _criterion_name(criterion)
    return weights_from_values({f.spec: f.criterion(key) for f in _usable(fits)})


def two_step_bmd(
    fits: Iterable[FittedModel],
    criterion: Criterion,
    q: float,
    max_design_dose: float = 1.0,
    scale: float = 1.0,
) -> BmdEstimate:
    """BMD of the criterion-selected model at its MLE."""
    fits = list(fits)
    chosen = select_ic(fits, criterion)
    fit = next(f for f in fits if f.spec == chosen and f.converged)
    dose = bmd(chosen, fit.beta_hat, q, max_design_dose)
    return BmdEstimate(q, dose, _criterion_name(criterion), chosen, scale)


def model_averaged_bmd(
    fits: Iterable[FittedModel],
    criterion: Criterion,
    q: float,
    max_design_dose: float = 1.0,
    scale: float = 1.0,
) -> BmdEstimate:
    """``sum_M w_M BMD_M`` with IC weights over the converged fits.

    Every model with positive weight must have a BMD at ``q``; otherwise the
    error from :func:`bmd` propagates.
    """
    fits = list(fits)
    weights = ic_weights(fits, criterion)
    by_spec = {f.spec: f for f in fits if f.converged}
    doses = {
        spec: bmd(spec, by_spec[spec].beta_hat, q, max_design_dose)
        for spec, w in weights.weights.items()
        if w > 0.0
    }
    avg = math.fsum(weights[s] * d for s, d in doses.items())
    # Rounding must not push a convex combination outside its hull.
    avg = min(max(avg, min(doses.values())), max(doses.values()))
    label = f"{_criterion_name(criterion)}ModAve"
    return BmdEstimate(q, avg, label, dict(weights.weights), scale)
