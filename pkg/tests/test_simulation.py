from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from bmdselect.estimators import ESTIMATORS, SELECTORS
from bmdselect.models import LG1, MS2, Family, ModelSpec, bmd, extra_risk, probabilities
from bmdselect.simulation import (
    BCME_SUBJECTS,
    PRESET_NAMES,
    ExperimentConfig,
    estimator_stats,
    generate_replicate,
    load_config,
    parse_config,
    preset,
    run_experiment,
    solve_curve_constraints,
)

DATA = Path(__file__).resolve().parent.parent / "data"
SMALL = preset("expt5", mreps=6, seed=7)


def test_solve_constraints_ms1():
    beta = solve_curve_constraints("MS", 1, [(0.0, 0.05), (1.0, 0.5)])
    b0 = -math.log(0.95)
    np.testing.assert_allclose(beta, [b0, math.log(2.0) - b0], atol=1e-14)
    np.testing.assert_allclose(beta, [0.05129, 0.64185], atol=5e-6)


def test_solve_constraints_lg1():
    beta = solve_curve_constraints(Family.LOGISTIC, 1, [(0.0, 0.3), (1.0, 0.75)])
    np.testing.assert_allclose(beta, [math.log(0.3 / 0.7), math.log(3.0) - math.log(0.3 / 0.7)], atol=1e-14)
    np.testing.assert_allclose(beta, [-0.84730, 1.94591], atol=5e-6)


def test_solve_constraints_passes_through_points():
    pts = [(0.0, 0.05), (0.5, 0.3), (1.0, 0.5)]
    for fam in ("LG", "MS"):
        spec = ModelSpec.parse(f"{fam}2")
        beta = solve_curve_constraints(fam, 2, pts)
        np.testing.assert_allclose(probabilities(spec, beta, [0.0, 0.5, 1.0]), [0.05, 0.3, 0.5], atol=1e-14)


def test_solve_constraints_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_curve_constraints("LG", 1, [(0.0, 0.1)])
    with pytest.raises(ValueError):
        solve_curve_constraints("LG", 1, [(0.0, 0.5), (1.0, 0.2)])
    with pytest.raises(ValueError):
        solve_curve_constraints("MS", 1, [(0.0, 0.0), (1.0, 0.2)])


def test_presets_exist_and_validate():
    for name in PRESET_NAMES:
        for design in ("J4", "J8"):
            cfg = preset(name, design=design)
            assert cfg.true_spec is not None
            assert 0 < cfg.true_bmd(0.01) < cfg.true_bmd(0.1)
    with pytest.raises(ValueError):
        preset("expt10")


def test_expt1_truth():
    cfg = preset("expt1")
    assert tuple(cfg.subjects) == BCME_SUBJECTS
    assert cfg.true_spec == MS2
    # Extra risk 1 - exp(-(0.32 d + 0.52 d^2)); solve the quadratic by hand.
    z = -math.log(0.95)
    assert cfg.true_bmd(0.05) == pytest.approx((-0.32 + math.sqrt(0.32**2 + 4 * 0.52 * z)) / (2 * 0.52), rel=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(np.array([0.0, 1.0]), np.array([10, 10]), mreps=5)
    with pytest.raises(ValueError):
        ExperimentConfig(np.array([0.0, 1.0]), np.array([10, 10]), LG1, np.array([0.0, 1.0]), mreps=0)
    with pytest.raises(ValueError):
        ExperimentConfig(np.array([0.0, 1.0]), np.array([10, 10]), LG1, np.array([0.0, 1.0, 2.0]))
    with pytest.raises(ValueError):
        ExperimentConfig(np.array([0.0, 1.0]), np.array([10, 10]), MS2, np.array([0.0, -1.0, 0.0]))
    with pytest.raises(ValueError):
        ExperimentConfig(np.array([0.0, 1.0]), np.array([10, 10]), LG1, np.array([0.0, 1.0]), bmr_values=(1.5,))


def test_probability_truth_uses_polyline():
    cfg = ExperimentConfig(np.array([0.0, 0.5, 1.0]), np.array([50, 50, 50]),
                           true_probs=np.array([0.0, 0.2, 0.6]), mreps=1)
    assert cfg.true_bmd(0.1) == pytest.approx(0.25, abs=1e-14)


def test_parse_config_file():
    cfg = load_config(DATA / "expt1.ini")
    ref = preset("expt1")
    np.testing.assert_array_equal(cfg.doses, ref.doses)
    np.testing.assert_array_equal(cfg.subjects, ref.subjects)
    np.testing.assert_array_equal(cfg.true_beta, ref.true_beta)
    assert cfg.mreps == 2000 and cfg.bmr_values == (0.01, 0.05, 0.10)


def test_parse_config_constraints_and_preset_override():
    cfg = parse_config("""
[experiment]
preset = expt4
design = J8
n_per_dose = 50
mreps = 10
bmr = 0.05
""")
    assert cfg.doses.size == 8 and set(cfg.subjects) == {50}
    assert cfg.mreps == 10 and cfg.bmr_values == (0.05,)
    cfg2 = parse_config("""
[experiment]
doses = 0, 0.5, 1
subjects = 20
[truth]
model = LG1
constraints = 0:0.3, 1:0.75
""")
    np.testing.assert_allclose(cfg2.true_beta, [-0.847298, 1.945910], atol=1e-6)


@pytest.mark.parametrize("text", [
    "[truth]\nmodel = LG1\nbeta = 0, 1\n",
    "[experiment]\ndoses = 0, 1\n[truth]\nmodel = LG1\nbeta = 0, 1\n",
    "[experiment]\ndoses = 0, 1\nsubjects = 10\n",
    "[experiment]\ndoses = 0, 1\nsubjects = 10.5\n[truth]\nmodel = LG1\nbeta = 0, 1\n",
    "[experiment]\ndoses = 0, 1\nsubjects = 10\n[truth]\nmodel = LG1\n",
])
def test_parse_config_errors(text):
    with pytest.raises(ValueError):
        parse_config(text)


def test_generate_replicate_deterministic():
    a = generate_replicate(SMALL, 3)
    b = generate_replicate(SMALL, 3)
    c = generate_replicate(SMALL, 4)
    np.testing.assert_array_equal(a.events, b.events)
    assert c.events.shape == a.events.shape
    assert a.name == "rep3"


def test_generate_replicate_binomial_moments():
    cfg = preset("expt5", mreps=2000, seed=99)
    ys = np.array([generate_replicate(cfg, i).events for i in range(2000)], dtype=float)
    p = cfg.probs()
    n = cfg.subjects
    mean_se = np.sqrt(n * p * (1 - p) / 2000)
    assert np.all(np.abs(ys.mean(axis=0) - n * p) < 4 * mean_se)
    np.testing.assert_allclose(ys.var(axis=0), n * p * (1 - p), rtol=0.1)


def test_estimator_stats_identity():
    rng = np.random.default_rng(3)
    vals = list(rng.normal(0.2, 0.05, 500)) + [float("nan")]
    s = estimator_stats("AIC", 0.05, 0.18, vals)
    assert s.n_ok == 500 and s.n_failed == 1
    assert s.rmse**2 == pytest.approx(s.bias**2 + s.se**2, rel=1e-12)
    arr = np.array(vals[:-1])
    assert s.se == pytest.approx(arr.std(ddof=0), rel=1e-12)


def test_estimator_stats_all_failed():
    s = estimator_stats("AIC", 0.05, 0.18, [float("nan")] * 3)
    assert s.n_ok == 0 and math.isnan(s.rmse)


def test_single_replicate_summary():
    s = run_experiment(SMALL.replace(mreps=1))
    for st in s.estimators:
        if st.n_ok:
            assert st.se == 0.0
            assert st.rmse == pytest.approx(abs(st.bias), abs=1e-15)
    for sel in s.selections:
        assert math.fsum(sel.percentages.values()) + sel.failed_pct == pytest.approx(100.0)


def test_results_independent_of_jobs():
    one = run_experiment(SMALL, jobs=1)
    two = run_experiment(SMALL, jobs=2)
    assert one.to_json() == two.to_json()
    assert one.replicates_csv() == two.replicates_csv()


def test_summary_shapes_and_csv():
    s = run_experiment(SMALL)
    assert len(s.estimators) == len(ESTIMATORS) * len(SMALL.bmr_values)
    assert len(s.selections) == len(SELECTORS) * len(SMALL.bmr_values)
    assert s.estimators_csv().splitlines()[0].startswith("estimator,q,true_bmd")
    assert s.selections_csv().splitlines()[0] == "selector,q,LG1,LG2,MS1,MS2,failed"
    assert len(s.replicates_csv().splitlines()) == 1 + 6 * len(ESTIMATORS) * len(SMALL.bmr_values)
    d = s.to_dict()
    assert d["mreps"] == 6 and d["truth"].startswith("MS2(")


def test_progress_callback():
    seen = []
    run_experiment(SMALL.replace(mreps=3), progress=lambda k, m: seen.append((k, m)))
    assert seen == [(1, 3), (2, 3), (3, 3)]


def test_large_sample_consistency():
    cfg = preset("expt5", n_per_dose=1_000_000, mreps=1, seed=5).replace(bmr_values=(0.05, 0.10))
    s = run_experiment(cfg)
    for q in (0.05, 0.10):
        truth = cfg.true_bmd(q)
        assert extra_risk(MS2, cfg.true_beta, truth) == pytest.approx(q, abs=1e-10)
        for name in ("AIC", "BIC", "AICModAve", "BICModAve"):
            assert s.estimator(name, q).mean == pytest.approx(truth, abs=1e-2)
        assert s.selection("AIC", q).percentages["MS2"] == 100.0
    assert bmd(MS2, cfg.true_beta, 0.05) == cfg.true_bmd(0.05)
