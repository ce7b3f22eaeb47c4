"""Command-line interface: ``bmdselect {fit,select,bmd,risk-matrix,simulate}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import QuantalDataset, load_dataset, standardize_doses
from .errors import BmdError
from .estimators import DEFAULT_BMRS, ESTIMATORS, SELECTORS, Analysis, Failure, analyze, normalize_estimator
from .focused import RiskMatrix
from .likelihood import FittedModel, fit_all
from .models import CANONICAL_MODELS, ModelSpec, probabilities
from .nonparametric import PavaFit
from .simulation import PRESET_NAMES, ExperimentSummary, load_config, preset, run_experiment

EXIT_ERROR = 2


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RunReport:
    """Everything a data command produced, ready for rendering."""

    data: QuantalDataset
    fits: dict[ModelSpec, FittedModel]
    analysis: Analysis | None = None
    risk_matrices: dict[float, RiskMatrix] = field(default_factory=dict)

    def dataset_dict(self) -> dict:
        d = self.data
        return {
            "name": d.name,
            "doses": d.doses.tolist(),
            "original_doses": d.original_doses.tolist(),
            "subjects": d.subjects.tolist(),
            "events": d.events.tolist(),
            "n_total": d.n_total,
            "scale": d.scale,
        }

    def fit_rows(self) -> list[dict]:
        return [
            {"model": m.label, "beta": f.beta_hat.tolist(), "loglik": f.loglik, "aic": f.aic,
             "bic": f.bic, "converged": f.converged, "iterations": f.iterations,
             "boundary": list(f.boundary), "separated": f.separated}
            for m, f in self.fits.items()
        ]

    def selection_rows(self) -> list[dict]:
        if self.analysis is None:
            return []
        rows = []
        for (name, q), sel in self.analysis.selections.items():
            rows.append({"selector": name, "q": q,
                         "model": None if isinstance(sel, Failure) else sel.label,
                         "error": str(sel) if isinstance(sel, Failure) else None})
        return sorted(rows, key=lambda r: (SELECTORS.index(r["selector"]), r["q"]))

    def bmd_rows(self) -> list[dict]:
        if self.analysis is None:
            return []
        rows = []
        for (name, q), est in self.analysis.estimates.items():
            if isinstance(est, Failure):
                rows.append({"estimator": name, "q": q, "bmd": None, "bmd_original": None,
                             "provenance": None, "error": est.reason})
            else:
                rows.append({"estimator": name, "q": q, "bmd": est.dose,
                             "bmd_original": est.dose_original,
                             "provenance": est.describe_provenance(), "error": None})
        return sorted(rows, key=lambda r: (ESTIMATORS.index(r["estimator"]), r["q"]))

    def to_dict(self) -> dict:
        out = {"dataset": self.dataset_dict(), "fits": self.fit_rows()}
        if self.analysis is not None:
            out["selections"] = self.selection_rows()
            out["bmds"] = self.bmd_rows()
        if self.risk_matrices:
            out["risk_matrices"] = {
                repr(q): {
                    "rows": [r.label for r in m.rows],
                    "columns": [c.label if isinstance(c, ModelSpec) else c for c in m.columns],
                    "risk": [[v if math.isfinite(v) else None for v in row] for row in m.risk.tolist()],
                    "diagnostics": {f"{k[0].label}|{k[1] if isinstance(k[1], str) else k[1].label}": v
                                    for k, v in m.diagnostics.items()},
                }
                for q, m in self.risk_matrices.items()
            }
        return out

    def curve_rows(self, points: int = 101) -> list[tuple[str, float, float]]:
        """Long-format ``(series, x, y)`` samples of fitted curves, PAVA polyline and data."""
        grid = np.linspace(0.0, float(self.data.doses[-1]), points)
        rows: list[tuple[str, float, float]] = []
        for m, f in self.fits.items():
            for x, y in zip(grid, probabilities(m, f.beta_hat, grid)):
                rows.append((m.label, float(x), float(y)))
        pava_fit = self.analysis.pava if self.analysis is not None else PavaFit.from_data(self.data)
        for x, y in zip(pava_fit.knots, pava_fit.probs):
            rows.append(("PAVA", float(x), float(y)))
        for x, y in zip(self.data.doses, self.data.events / self.data.subjects):
            rows.append(("observed", float(x), float(y)))
        return rows


def _fmt(v: float | None, width: int = 10, prec: int = 4) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "--".rjust(width)
    return f"{v:{width}.{prec}f}"


def render_fit_table(report: RunReport) -> str:
    lines = [f"{'model':<6}{'loglik':>12}{'AIC':>10}{'BIC':>10}  conv  beta"]
    for r in report.fit_rows():
        beta = ", ".join(f"{b:.4f}" for b in r["beta"])
        lines.append(f"{r['model']:<6}{r['loglik']:12.4f}{r['aic']:10.3f}{r['bic']:10.3f}"
                     f"  {'yes' if r['converged'] else 'no ':<4}  ({beta})")
    return "\n".join(lines)


def render_selection_table(report: RunReport, qs: Sequence[float]) -> str:
    sel = {(r["selector"], r["q"]): r["model"] or "--" for r in report.selection_rows()}
    head = f"{'selector':<10}" + "".join(f"{'q=' + format(q, 'g'):>10}" for q in qs)
    body = [f"{s:<10}" + "".join(f"{sel.get((s, q), '--'):>10}" for q in qs) for s in SELECTORS]
    return "\n".join([head] + body)


def render_bmd_table(report: RunReport, qs: Sequence[float]) -> str:
    rows = report.bmd_rows()
    names = [n for n in ESTIMATORS if any(r["estimator"] == n for r in rows)]
    cell = {(r["estimator"], r["q"]): r for r in rows}
    head = f"{'estimator':<11}" + "".join(f"{'q=' + format(q, 'g'):>10}" for q in qs)
    lines = ["BMD (standardized doses)", head]
    for n in names:
        lines.append(f"{n:<11}" + "".join(_fmt(cell[(n, q)]["bmd"], 10, 3) for q in qs))
    if report.data.scale != 1.0:
        lines += ["", f"BMD (original units, scale {report.data.scale:g})", head]
        for n in names:
            lines.append(f"{n:<11}" + "".join(_fmt(cell[(n, q)]["bmd_original"], 10, 3) for q in qs))
    errors = [r for r in rows if r["error"]]
    if errors:
        lines += ["", "failed cells:"]
        lines += [f"  {r['estimator']} q={r['q']:g}: {r['error']}" for r in errors]
    return "\n".join(lines)


def render_risk_matrix(m: RiskMatrix) -> str:
    cols = [c.label if isinstance(c, ModelSpec) else c for c in m.columns]
    lines = [f"risk matrix, q={m.q:g} (rows: estimator class, columns: assumed truth)",
             f"{'':<6}" + "".join(f"{c:>12}" for c in cols)]
    for i, r in enumerate(m.rows):
        lines.append(f"{r.label:<6}" + "".join(_fmt(v, 12, 4) for v in m.risk[i]))
    for (row, col), msg in m.diagnostics.items():
        lines.append(f"  {row.label} x {col if isinstance(col, str) else col.label}: {msg}")
    return "\n".join(lines)


def _csv(rows: list[dict], keys: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for r in rows:
        w.writerow(["" if r[k] is None else (";".join(map(repr, r[k])) if isinstance(r[k], list) else r[k])
                    for k in keys])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

def _bmr_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid BMR list {text!r}") from None
    if not vals or any(not 0.0 < q < 1.0 for q in vals):
        raise argparse.ArgumentTypeError("BMR values must lie in (0, 1)")
    return vals


def _model_list(text: str) -> list[ModelSpec]:
    try:
        return sorted({ModelSpec.parse(t) for t in text.split(",") if t.strip()})
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _estimator_list(text: str) -> list[str]:
    try:
        return [normalize_estimator(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _load(args: argparse.Namespace) -> QuantalDataset:
    data = load_dataset(args.data)
    return data if args.no_standardize else standardize_doses(data)


def _emit(args: argparse.Namespace, text: str, payload: dict | None, csv_text: str | None) -> None:
    if getattr(args, "json", False) and payload is not None:
        print(json.dumps(payload, indent=2))
    elif getattr(args, "csv", False) and csv_text is not None:
        sys.stdout.write(csv_text)
    else:
        print(text)


def _write_plot_data(path: str | None, report: RunReport) -> None:
    if not path:
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "x", "y"])
        w.writerows((s, repr(x), repr(y)) for s, x, y in report.curve_rows())


def cmd_fit(args: argparse.Namespace) -> int:
    data = _load(args)
    fits = fit_all(data, args.models)
    report = RunReport(data, fits)
    _write_plot_data(args.plot_data, report)
    _emit(args, render_fit_table(report), report.to_dict(),
          _csv(report.fit_rows(), ["model", "beta", "loglik", "aic", "bic", "converged", "iterations"]))
    return 0


def _analysis_report(args: argparse.Namespace, estimators: Sequence[str]) -> RunReport:
    data = _load(args)
    res = analyze(data, args.bmr, args.models, estimators, args.gradient)
    return RunReport(data, dict(res.fits), res, dict(res.risk_matrices))


def cmd_select(args: argparse.Namespace) -> int:
    report = _analysis_report(args, ("FIC1",))
    payload = {"dataset": report.dataset_dict(), "fits": report.fit_rows(),
               "selections": report.selection_rows()}
    _emit(args, render_selection_table(report, args.bmr), payload,
          _csv(report.selection_rows(), ["selector", "q", "model", "error"]))
    return 0


def cmd_bmd(args: argparse.Namespace) -> int:
    report = _analysis_report(args, args.estimators)
    _write_plot_data(args.plot_data, report)
    payload = report.to_dict()
    payload.pop("risk_matrices", None)
    _emit(args, render_bmd_table(report, args.bmr), payload,
          _csv(report.bmd_rows(), ["estimator", "q", "bmd", "bmd_original", "provenance", "error"]))
    return 0


def cmd_risk_matrix(args: argparse.Namespace) -> int:
    report = _analysis_report(args, ("FIC1",))
    mats = [report.risk_matrices[q] for q in args.bmr if q in report.risk_matrices]
    missing = [q for q in args.bmr if q not in report.risk_matrices]
    text = "\n\n".join(render_risk_matrix(m) for m in mats)
    if missing:
        text += "\n" + "\n".join(f"q={q:g}: no risk matrix (empirical BMD unavailable)" for q in missing)
    csv_text = "".join(f"# q={m.q!r}\n" + m.to_csv() for m in mats)
    _emit(args, text, {"dataset": report.dataset_dict(), **{k: v for k, v in report.to_dict().items()
                                                            if k == "risk_matrices"}}, csv_text)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.config and args.preset:
        raise ValueError("give either a config file or --preset, not both")
    if args.config:
        config = load_config(args.config)
    elif args.preset:
        config = preset(args.preset, design=args.design, n_per_dose=args.n_per_dose)
    else:
        raise ValueError("simulate needs a config file or --preset")
    changes = {}
    if args.mreps is not None:
        changes["mreps"] = args.mreps
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.bmr is not None:
        changes["bmr_values"] = tuple(args.bmr)
    if args.gradient is not None:
        changes["gradient_form"] = args.gradient
    if changes:
        config = config.replace(**changes)

    def report_progress(done: int, total: int) -> None:
        print(f"\r{done}/{total} replicates", end="", file=sys.stderr, flush=True)

    progress = report_progress if args.progress else None

    summary = run_experiment(config, jobs=args.jobs, progress=progress)
    if args.progress:
        print(file=sys.stderr)
    if args.output_dir:
        os.makedirs(args.output_dir, exist_ok=True)
        base = os.path.join(args.output_dir, config.name)
        _write(base + "_estimators.csv", summary.estimators_csv())
        _write(base + "_selections.csv", summary.selections_csv())
        _write(base + "_summary.json", summary.to_json())
        if args.replicates:
            _write(base + "_replicates.csv", summary.replicates_csv())
    _emit(args, render_summary(summary), summary.to_dict(), summary.to_csv())
    return 0


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def render_summary(s: ExperimentSummary) -> str:
    c = s.config
    lines = [f"experiment {c.name}: truth {c.describe_truth()}, mreps={c.mreps}, seed={c.seed}", "",
             f"{'estimator':<11}{'q':>6}{'true':>9}{'mean':>9}{'bias':>9}{'SE':>9}{'RMSE':>9}{'fail':>6}"]
    for e in s.estimators:
        lines.append(f"{e.estimator:<11}{e.q:6.2f}{_fmt(e.true_bmd, 9)}{_fmt(e.mean, 9)}{_fmt(e.bias, 9)}"
                     f"{_fmt(e.se, 9)}{_fmt(e.rmse, 9)}{e.n_failed:6d}")
    labels = [m.label for m in c.models]
    lines += ["", f"{'selector':<10}{'q':>6}" + "".join(f"{lab:>8}" for lab in labels) + f"{'failed':>8}"]
    for sel in s.selections:
        lines.append(f"{sel.selector:<10}{sel.q:6.2f}" + "".join(f"{sel.percentages[lab]:8.2f}" for lab in labels)
                     + f"{sel.failed_pct:8.2f}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bmdselect", description="Benchmark dose estimation with model selection.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, bmr: bool = True) -> None:
        p.add_argument("data", help="CSV file with header dose,n,y")
        p.add_argument("--models", type=_model_list, default=list(CANONICAL_MODELS),
                       help="comma-separated model classes (default LG1,LG2,MS1,MS2)")
        p.add_argument("--no-standardize", action="store_true", help="keep doses in original units")
        if bmr:
            p.add_argument("--bmr", type=_bmr_list, default=list(DEFAULT_BMRS),
                           help="comma-separated BMR values (default 0.01,0.05,0.1)")
            p.add_argument("--gradient", choices=("reference", "exact"), default="reference",
                           help="multistage BMD-gradient form used in the focused risks")
        out = p.add_mutually_exclusive_group()
        out.add_argument("--json", action="store_true", help="machine-readable JSON output")
        out.add_argument("--csv", action="store_true", help="machine-readable CSV output")

    p = sub.add_parser("fit", help="fit the model classes")
    common(p, bmr=False)
    p.add_argument("--plot-data", metavar="PATH", help="write long-format curve samples (series,x,y)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="model chosen by each selector")
    common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("bmd", help="BMD estimates for every estimator")
    common(p)
    p.add_argument("--estimators", type=_estimator_list, default=list(ESTIMATORS),
                   help="comma-separated estimators (default all eight)")
    p.add_argument("--plot-data", metavar="PATH", help="write long-format curve samples (series,x,y)")
    p.set_defaults(func=cmd_bmd)

    p = sub.add_parser("risk-matrix", help="focused risk matrices")
    common(p)
    p.set_defaults(func=cmd_risk_matrix)

    p = sub.add_parser("simulate", help="Monte-Carlo experiment")
    p.add_argument("config", nargs="?", help="experiment INI file")
    p.add_argument("--preset", choices=PRESET_NAMES, help="built-in experiment")
    p.add_argument("--design", default="J4", choices=("J4", "J8"), help="dose design for expt2-expt9")
    p.add_argument("--n", dest="n_per_dose", type=int, default=100, help="subjects per dose for expt2-expt9")
    p.add_argument("--mreps", type=int, help="number of replicates")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--bmr", type=_bmr_list, help="comma-separated BMR values")
    p.add_argument("--gradient", choices=("reference", "exact"), help="multistage BMD-gradient form")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--output-dir", help="directory for CSV and JSON summaries")
    p.add_argument("--replicates", action="store_true", help="also write per-replicate estimates")
    p.add_argument("--progress", action="store_true", help="report progress on stderr")
    out = p.add_mutually_exclusive_group()
    out.add_argument("--json", action="store_true", help="print JSON summary")
    out.add_argument("--csv", action="store_true", help="print CSV summary")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except (OSError, BmdError, ValueError) as exc:
        print(f"bmdselect: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
