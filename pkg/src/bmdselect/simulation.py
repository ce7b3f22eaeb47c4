"""Monte-Carlo evaluation of the BMD estimators and model selectors.

Each replicate draws binomial counts at the design doses from a known true
curve, runs :func:`bmdselect.estimators.analyze` on them and records the
estimates and selections. Random streams are keyed on ``(seed, replicate,
dose index)`` so results do not depend on scheduling or on ``jobs``.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .data import QuantalDataset
from .estimators import DEFAULT_BMRS, ESTIMATORS, SELECTORS, Failure, analyze
from .models import CANONICAL_MODELS, Family, GradientForm, ModelSpec, bmd, design_matrix, probabilities
from .nonparametric import PavaFit, nonpar_bmd_value


# ---------------------------------------------------------------------------
# True curves
# ---------------------------------------------------------------------------

def solve_curve_constraints(
    family: Family | str,
    order: int,
    constraints: Sequence[tuple[float, float]],
    design_doses: ArrayLike | None = None,
) -> NDArray[np.float64]:
    """Coefficients of the curve passing through ``(dose, prob)`` points.

    The link (logit, or ``-ln(1 - p)`` for multistage) turns the conditions
    into a square linear system in ``beta``.

    Raises
    ------
    ValueError
        Wrong number of constraints, probabilities not increasing in dose,
        a singular system, or a multistage solution that is negative at a
        design dose.
    """
    fam = family if isinstance(family, Family) else Family(str(family).upper())
    pts = sorted((float(d), float(p)) for d, p in constraints)
    if len(pts) != order + 1:
        raise ValueError(f"order {order} needs {order + 1} constraints, got {len(pts)}")
    d = np.array([x for x, _ in pts])
    p = np.array([y for _, y in pts])
    if np.any(np.diff(d) <= 0) or np.any(np.diff(p) <= 0):
        raise ValueError("constraint doses must be distinct and probabilities increasing in dose")
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("constraint probabilities must lie strictly inside (0, 1)")
    z = np.log(p / (1.0 - p)) if fam is Family.LOGISTIC else -np.log1p(-p)
    X = design_matrix(d, order)
    if np.linalg.cond(X) > 1e12:
        raise ValueError("constraint system is singular")
    beta = np.linalg.solve(X, z)
    if fam is Family.MULTISTAGE:
        check = d if design_doses is None else np.asarray(design_doses, float)
        if np.any(design_matrix(check, order) @ beta < -1e-12):
            raise ValueError("multistage solution is negative at a design dose")
    return beta


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A simulation design and its true curve.

    The truth is either a model (``true_spec`` with ``true_beta``) or a raw
    probability vector ``true_probs`` at the design doses. In the latter case
    the true BMD is read from the piecewise-linear curve through those
    probabilities.
    """

    doses: NDArray[np.float64]
    subjects: NDArray[np.int64]
    true_spec: ModelSpec | None = None
    true_beta: NDArray[np.float64] | None = None
    true_probs: NDArray[np.float64] | None = None
    bmr_values: tuple[float, ...] = DEFAULT_BMRS
    mreps: int = 2000
    seed: int = 20240601
    name: str = "custom"
    models: tuple[ModelSpec, ...] = CANONICAL_MODELS
    gradient_form: GradientForm = "reference"

    def __post_init__(self) -> None:
        d = np.asarray(self.doses, dtype=float)
        n = np.asarray(self.subjects)
        if n.ndim == 0:
            n = np.full(d.shape, int(n))
        object.__setattr__(self, "doses", d)
        object.__setattr__(self, "subjects", n.astype(np.int64))
        if d.ndim != 1 or d.size < 2 or np.any(np.diff(d) <= 0) or d[0] < 0:
            raise ValueError("doses must be an increasing list of at least two non-negative values")
        if self.subjects.shape != d.shape or np.any(self.subjects <= 0):
            raise ValueError("subjects must be positive, one per dose")
        if int(self.mreps) < 1:
            raise ValueError("mreps must be at least 1")
        object.__setattr__(self, "mreps", int(self.mreps))
        object.__setattr__(self, "seed", int(self.seed))
        qs = tuple(float(q) for q in self.bmr_values)
        if not qs or any(not 0.0 < q < 1.0 for q in qs):
            raise ValueError("every BMR must lie in (0, 1)")
        object.__setattr__(self, "bmr_values", qs)
        if (self.true_spec is None) == (self.true_probs is None):
            raise ValueError("give exactly one of a true model or true probabilities")
        if self.true_spec is not None:
            if self.true_beta is None:
                raise ValueError("a true model needs coefficients")
            beta = np.asarray(self.true_beta, dtype=float)
            if beta.shape != (self.true_spec.n_params,):
                raise ValueError(f"{self.true_spec.label} needs {self.true_spec.n_params} coefficients")
            object.__setattr__(self, "true_beta", beta)
            if self.true_spec.family is Family.MULTISTAGE and np.any(design_matrix(d, self.true_spec.order) @ beta < -1e-12):
                raise ValueError("true multistage curve violates the constraint at a design dose")
        else:
            p = np.asarray(self.true_probs, dtype=float)
            if p.shape != d.shape or np.any(p < 0) or np.any(p > 1):
                raise ValueError("true probabilities must be in [0, 1], one per dose")
            object.__setattr__(self, "true_probs", p)
        if self.gradient_form not in ("exact", "reference"):
            raise ValueError(f"unknown gradient form {self.gradient_form!r}")

    def probs(self) -> NDArray[np.float64]:
        if self.true_probs is not None:
            return self.true_probs
        return probabilities(self.true_spec, self.true_beta, self.doses)

    def true_bmd(self, q: float) -> float:
        if self.true_spec is not None:
            return bmd(self.true_spec, self.true_beta, q, float(self.doses[-1]))
        fit = PavaFit(self.doses, self.true_probs, self.subjects.astype(float))
        return nonpar_bmd_value(fit, q)

    def replace(self, **changes) -> "ExperimentConfig":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return ExperimentConfig(**fields)

    def describe_truth(self) -> str:
        if self.true_spec is not None:
            coef = ", ".join(f"{b:.6g}" for b in self.true_beta)
            return f"{self.true_spec.label}({coef})"
        return "probs(" + ", ".join(f"{p:.6g}" for p in self.true_probs) + ")"


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def parse_config(text: str) -> ExperimentConfig:
    """Read an INI experiment description.

    Sections and keys::

        [experiment]
        name     = label used in reports            (optional)
        preset   = expt1 ... expt9                  (optional base)
        doses    = 0, 0.25, 0.5, 1
        subjects = 100                              (one value or one per dose)
        bmr      = 0.01, 0.05, 0.10
        mreps    = 2000
        seed     = 12345
        models   = LG1, LG2, MS1, MS2
        gradient = reference | exact

        [truth]
        model       = MS2
        beta        = 0, 0.32, 0.52
        constraints = 0:0.05, 0.5:0.30, 1:0.50       (instead of beta)
        probs       = ...                            (instead of model)
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    if not cp.has_section("experiment"):
        raise ValueError("config needs an [experiment] section")
    ex = cp["experiment"]
    kw: dict = {}
    base = None
    if "preset" in ex:
        base = preset(ex["preset"].strip(), design=ex.get("design", "J4"),
                      n_per_dose=int(ex.get("n_per_dose", "100")))
    if "design" in ex and base is None:
        raise ValueError("'design' is only meaningful together with 'preset'")
    if "doses" in ex:
        kw["doses"] = np.array(_floats(ex["doses"]))
    if "subjects" in ex:
        vals = _floats(ex["subjects"])
        if any(not v.is_integer() for v in vals):
            raise ValueError("subjects must be integers")
        kw["subjects"] = np.array(vals, dtype=np.int64) if len(vals) > 1 else np.int64(vals[0])
    if "bmr" in ex:
        kw["bmr_values"] = tuple(_floats(ex["bmr"]))
    for key, conv in (("mreps", int), ("seed", int), ("name", str)):
        if key in ex:
            kw[key] = conv(ex[key].strip())
    if "models" in ex:
        kw["models"] = tuple(sorted(ModelSpec.parse(m) for m in ex["models"].split(",") if m.strip()))
    if "gradient" in ex:
        kw["gradient_form"] = ex["gradient"].strip().lower()

    if cp.has_section("truth"):
        tr = cp["truth"]
        if "probs" in tr:
            kw.update(true_spec=None, true_beta=None, true_probs=np.array(_floats(tr["probs"])))
        else:
            if "model" not in tr:
                raise ValueError("[truth] needs 'model' or 'probs'")
            spec = ModelSpec.parse(tr["model"])
            if "beta" in tr:
                beta = np.array(_floats(tr["beta"]))
            elif "constraints" in tr:
                pts = []
                for item in tr["constraints"].split(","):
                    if item.strip():
                        dd, pp = item.split(":")
                        pts.append((float(dd), float(pp)))
                doses = kw.get("doses", base.doses if base is not None else None)
                beta = solve_curve_constraints(spec.family, spec.order, pts, doses)
            else:
                raise ValueError("[truth] model needs 'beta' or 'constraints'")
            kw.update(true_spec=spec, true_beta=beta, true_probs=None)

    if base is not None:
        return base.replace(**kw)
    missing = {"doses", "subjects"} - kw.keys()
    if missing:
        raise ValueError(f"config is missing {', '.join(sorted(missing))}")
    if "true_spec" not in kw:
        raise ValueError("config needs a [truth] section")
    return ExperimentConfig(**kw)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

BCME_DOSES = (0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)
# Group sizes behind the published BCME estimates (the 20 ppm group has 26 animals).
BCME_SUBJECTS = (240, 41, 26, 18, 18, 34, 20)
DESIGNS: Mapping[str, tuple[float, ...]] = {
    "J4": (0.0, 0.25, 0.5, 1.0),
    "J8": (0.0, 0.00625, 0.03125, 0.0625, 0.125, 0.25, 0.5, 1.0),
}
PRESET_CURVES: Mapping[str, tuple[str, tuple[tuple[float, float], ...]]] = {
    "expt2": ("LG1", ((0.0, 0.05), (1.0, 0.50))),
    "expt3": ("LG2", ((0.0, 0.05), (0.5, 0.30), (1.0, 0.50))),
    "expt4": ("MS1", ((0.0, 0.05), (1.0, 0.50))),
    "expt5": ("MS2", ((0.0, 0.05), (0.5, 0.30), (1.0, 0.50))),
    "expt6": ("LG1", ((0.0, 0.30), (1.0, 0.75))),
    "expt7": ("LG2", ((0.0, 0.30), (0.5, 0.52), (1.0, 0.75))),
    "expt8": ("MS1", ((0.0, 0.30), (1.0, 0.75))),
    "expt9": ("MS2", ((0.0, 0.30), (0.5, 0.52), (1.0, 0.75))),
}
PRESET_NAMES: tuple[str, ...] = ("expt1",) + tuple(PRESET_CURVES)


def preset(name: str, design: str = "J4", n_per_dose: int = 100, mreps: int = 2000,
           seed: int = 20240601) -> ExperimentConfig:
    """Built-in experiment configurations.

    ``expt1`` draws from the MS2 curve ``beta = (0, 0.32, 0.52)`` on the BCME
    design. ``expt2`` to ``expt9`` use the listed constraint curves on the
    ``J4`` or ``J8`` design with ``n_per_dose`` subjects per dose.
    """
    key = name.strip().lower()
    if key == "expt1":
        return ExperimentConfig(
            np.array(BCME_DOSES), np.array(BCME_SUBJECTS), ModelSpec.parse("MS2"),
            np.array([0.0, 0.32, 0.52]), mreps=mreps, seed=seed, name="expt1",
        )
    if key not in PRESET_CURVES:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    if design.upper() not in DESIGNS:
        raise ValueError(f"unknown design {design!r}; choose J4 or J8")
    label, pts = PRESET_CURVES[key]
    spec = ModelSpec.parse(label)
    doses = np.array(DESIGNS[design.upper()])
    beta = solve_curve_constraints(spec.family, spec.order, pts, doses)
    return ExperimentConfig(doses, np.int64(n_per_dose), spec, beta, mreps=mreps, seed=seed,
                            name=f"{key}-{design.upper()}-N{n_per_dose}")


# ---------------------------------------------------------------------------
# Replicates
# ---------------------------------------------------------------------------

def _stream(seed: int, replicate: int, dose_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(replicate, dose_index))
    return np.random.Generator(np.random.Philox(ss))


def generate_replicate(config: ExperimentConfig, replicate_index: int) -> QuantalDataset:
    """Binomial counts at each design dose; deterministic in ``(seed, replicate_index)``."""
    probs = config.probs()
    events = [
        int(_stream(config.seed, replicate_index, j).binomial(int(n), float(p)))
        for j, (n, p) in enumerate(zip(config.subjects, probs))
    ]
    return QuantalDataset(config.doses, config.subjects, np.array(events), name=f"rep{replicate_index}")


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    estimates: tuple[tuple[float, ...], ...]  # [estimator][q], nan when failed
    selections: tuple[tuple[str, ...], ...]   # [selector][q], "" when failed
    unconverged: tuple[str, ...]


def run_replicate(config: ExperimentConfig, index: int) -> ReplicateResult:
    data = generate_replicate(config, index)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = analyze(data, config.bmr_values, config.models, ESTIMATORS, config.gradient_form)
    est = tuple(
        tuple(
            float("nan") if isinstance(o := res.estimates[(e, q)], Failure) else o.dose
            for q in config.bmr_values
        )
        for e in ESTIMATORS
    )
    sel = tuple(
        tuple(
            "" if isinstance(s := res.selections[(name, q)], Failure) else s.label
            for q in config.bmr_values
        )
        for name in SELECTORS
    )
    bad = tuple(m.label for m, f in res.fits.items() if not f.converged)
    return ReplicateResult(index, est, sel, bad)


def _run_chunk(args: tuple[ExperimentConfig, Sequence[int]]) -> list[ReplicateResult]:
    config, indices = args
    return [run_replicate(config, i) for i in indices]


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimatorStats:
    """Accuracy of one estimator at one BMR; population (1/m) formulas."""

    estimator: str
    q: float
    true_bmd: float
    n_ok: int
    n_failed: int
    mean: float
    bias: float
    se: float
    rmse: float


@dataclass(frozen=True)
class SelectionStats:
    """Percentage of replicates in which a selector chose each model."""

    selector: str
    q: float
    percentages: Mapping[str, float]
    failed_pct: float


def estimator_stats(name: str, q: float, truth: float, values: Sequence[float]) -> EstimatorStats:
    ok = [v for v in values if math.isfinite(v)]
    m = len(ok)
    failed = len(values) - m
    if m == 0:
        nan = float("nan")
        return EstimatorStats(name, q, truth, 0, failed, nan, nan, nan, nan)
    mean = math.fsum(ok) / m
    se = math.sqrt(math.fsum((v - mean) ** 2 for v in ok) / m)
    rmse = math.sqrt(math.fsum((v - truth) ** 2 for v in ok) / m)
    return EstimatorStats(name, q, truth, m, failed, mean, mean - truth, se, rmse)


@dataclass(frozen=True, eq=False)
class ExperimentSummary:
    config: ExperimentConfig
    estimators: tuple[EstimatorStats, ...]
    selections: tuple[SelectionStats, ...]
    fit_failures: Mapping[str, int]
    replicates: tuple[ReplicateResult, ...] = field(repr=False, default=())

    @property
    def mreps(self) -> int:
        return self.config.mreps

    def estimator(self, name: str, q: float) -> EstimatorStats:
        for s in self.estimators:
            if s.estimator == name and math.isclose(s.q, q):
                return s
        raise KeyError((name, q))

    def selection(self, name: str, q: float) -> SelectionStats:
        for s in self.selections:
            if s.selector == name and math.isclose(s.q, q):
                return s
        raise KeyError((name, q))

    def estimators_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "q", "true_bmd", "n_ok", "n_failed", "mean", "bias", "se", "rmse"])
        for s in self.estimators:
            w.writerow([s.estimator, s.q, repr(s.true_bmd), s.n_ok, s.n_failed,
                        repr(s.mean), repr(s.bias), repr(s.se), repr(s.rmse)])
        return buf.getvalue()

    def selections_csv(self) -> str:
        labels = [m.label for m in self.config.models]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["selector", "q"] + labels + ["failed"])
        for s in self.selections:
            w.writerow([s.selector, s.q] + [repr(s.percentages[m]) for m in labels] + [repr(s.failed_pct)])
        return buf.getvalue()

    def replicates_csv(self) -> str:
        """Long-format per-replicate estimates (replicate, estimator, q, bmd) for box plots."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "estimator", "q", "bmd"])
        for r in self.replicates:
            for e, row in zip(ESTIMATORS, r.estimates):
                for q, v in zip(self.config.bmr_values, row):
                    w.writerow([r.index, e, q, repr(v) if math.isfinite(v) else ""])
        return buf.getvalue()

    def to_csv(self) -> str:
        return "# estimators\n" + self.estimators_csv() + "# selections\n" + self.selections_csv()

    def to_dict(self) -> dict:
        def num(x: float):
            return x if math.isfinite(x) else None

        c = self.config
        return {
            "name": c.name,
            "truth": c.describe_truth(),
            "doses": c.doses.tolist(),
            "subjects": c.subjects.tolist(),
            "bmr": list(c.bmr_values),
            "mreps": c.mreps,
            "seed": c.seed,
            "gradient_form": c.gradient_form,
            "estimators": [
                {"estimator": s.estimator, "q": s.q, "true_bmd": s.true_bmd, "n_ok": s.n_ok,
                 "n_failed": s.n_failed, "mean": num(s.mean), "bias": num(s.bias),
                 "se": num(s.se), "rmse": num(s.rmse)}
                for s in self.estimators
            ],
            "selections": [
                {"selector": s.selector, "q": s.q, "percentages": dict(s.percentages),
                 "failed": s.failed_pct}
                for s in self.selections
            ],
            "fit_failures": dict(self.fit_failures),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def summarize(config: ExperimentConfig, results: Sequence[ReplicateResult]) -> ExperimentSummary:
    results = sorted(results, key=lambda r: r.index)
    m = len(results)
    labels = [s.label for s in config.models]
    est_stats = []
    for ei, name in enumerate(ESTIMATORS):
        for qi, q in enumerate(config.bmr_values):
            vals = [r.estimates[ei][qi] for r in results]
            est_stats.append(estimator_stats(name, q, config.true_bmd(q), vals))
    sel_stats = []
    for si, name in enumerate(SELECTORS):
        for qi, q in enumerate(config.bmr_values):
            picks = [r.selections[si][qi] for r in results]
            pct = {lab: 100.0 * sum(p == lab for p in picks) / m for lab in labels}
            sel_stats.append(SelectionStats(name, q, pct, 100.0 * sum(p == "" for p in picks) / m))
    failures = {lab: sum(lab in r.unconverged for r in results) for lab in labels}
    return ExperimentSummary(config, tuple(est_stats), tuple(sel_stats), failures, tuple(results))


def run_experiment(
    config: ExperimentConfig,
    jobs: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> ExperimentSummary:
    """Run ``config.mreps`` replicates, in ``jobs`` processes, and summarize.

    The summary is identical for any ``jobs`` value: each replicate's data
    depend only on ``(seed, replicate)`` and aggregation runs in replicate order.
    """
    indices = list(range(config.mreps))
    results: list[ReplicateResult] = []
    if jobs <= 1 or config.mreps == 1:
        for k, i in enumerate(indices, 1):
            results.append(run_replicate(config, i))
            if progress:
                progress(k, config.mreps)
    else:
        size = max(1, min(25, config.mreps // (4 * jobs) or 1))
        chunks = [indices[i:i + size] for i in range(0, len(indices), size)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for chunk in pool.map(_run_chunk, [(config, c) for c in chunks]):
                results.extend(chunk)
                if progress:
                    progress(len(results), config.mreps)
    return summarize(config, results)
