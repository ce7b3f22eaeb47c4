"""Model-free dose-response estimation via isotonic regression.

The observed proportions are smoothed into a non-decreasing sequence by the
pool-adjacent-violators algorithm and joined by straight lines; the benchmark
dose is then read off that polyline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import isotonic_regression

from .data import QuantalDataset
from .errors import BmrUnattainable, OutsideDesignRange
from .models import BmdEstimate


def empirical_probs(data: QuantalDataset) -> NDArray[np.float64]:
    """Observed response proportions ``Y_j / N_j``."""
    return data.events / data.subjects.astype(float)


def pava(values: ArrayLike, weights: ArrayLike | None = None) -> NDArray[np.float64]:
    """Weighted non-decreasing isotonic regression of ``values``."""
    x = np.asarray(values, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    if x.shape != w.shape or x.ndim != 1:
        raise ValueError("values and weights must be 1-d arrays of equal length")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    if x.size == 0:
        return x.copy()
    return np.asarray(isotonic_regression(x, weights=w, increasing=True).x, dtype=float)


@dataclass(frozen=True, eq=False)
class PavaFit:
    """Isotonic probabilities ``probs`` at the design doses ``knots``."""

    knots: NDArray[np.float64]
    probs: NDArray[np.float64]
    weights: NDArray[np.float64]
    scale: float = 1.0

    @classmethod
    def from_data(cls, data: QuantalDataset) -> "PavaFit":
        w = data.subjects.astype(float)
        return cls(data.doses.copy(), pava(empirical_probs(data), w), w, data.scale)

    @property
    def background(self) -> float:
        return float(self.probs[0])

    def extra_risk_at_knots(self) -> NDArray[np.float64]:
        p0 = self.background
        if p0 >= 1.0:
            return np.zeros_like(self.probs)
        return (self.probs - p0) / (1.0 - p0)


def piecewise_pi(fit: PavaFit, d: float) -> float:
    """Linear interpolation of the isotonic probabilities at dose ``d``."""
    if not fit.knots[0] <= d <= fit.knots[-1]:
        raise OutsideDesignRange(
            f"dose {d:g} outside design range [{fit.knots[0]:g}, {fit.knots[-1]:g}]"
        )
    return float(np.interp(d, fit.knots, fit.probs))


def nonpar_bmd_value(fit: PavaFit, q: float) -> float:
    """Smallest dose where the polyline's extra risk over ``probs[0]`` equals ``q``."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"BMR must lie in (0, 1), got {q}")
    er = fit.extra_risk_at_knots()
    if er[-1] < q:
        raise BmrUnattainable(
            f"empirical extra risk reaches only {er[-1]:.4g} at the top dose, below {q}"
        )
    j = int(np.argmax(er >= q))
    if er[j] == q:
        return float(fit.knots[j])
    d0, d1 = fit.knots[j - 1], fit.knots[j]
    e0, e1 = er[j - 1], er[j]
    return float(d0 + (q - e0) * (d1 - d0) / (e1 - e0))


def nonpar_bmd(fit: PavaFit, q: float) -> BmdEstimate:
    """Nonparametric BMD estimate (see :func:`nonpar_bmd_value`)."""
    return BmdEstimate(q, nonpar_bmd_value(fit, q), "NONPAR", "PAVA", fit.scale)
