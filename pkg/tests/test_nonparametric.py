from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmdselect.data import QuantalDataset
from bmdselect.errors import BmrUnattainable, OutsideDesignRange
from bmdselect.nonparametric import (
    PavaFit,
    empirical_probs,
    nonpar_bmd,
    nonpar_bmd_value,
    pava,
    piecewise_pi,
)
from oracles import isotonic_exhaustive


def test_empirical_probs_tabulated_bcme(bcme_tabulated):
    expected = np.array([0, 1 / 41, 3 / 46, 4 / 18, 4 / 18, 15 / 34, 12 / 20])
    np.testing.assert_allclose(empirical_probs(bcme_tabulated), expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(empirical_probs(bcme_tabulated),
                               [0, 0.0244, 0.0652, 0.2222, 0.2222, 0.4412, 0.6], atol=5e-5)


def test_pava_pools_single_violation():
    np.testing.assert_allclose(pava([0.1, 0.05, 0.2]), [0.075, 0.075, 0.2], atol=1e-15)


def test_pava_weighted_pool():
    # Weighted mean of 0.3 (w=1) and 0.1 (w=3) is 0.15.
    np.testing.assert_allclose(pava([0.3, 0.1], [1.0, 3.0]), [0.15, 0.15], atol=1e-15)


def test_pava_leaves_monotone_input_alone():
    x = np.array([0.0, 0.1, 0.1, 0.4])
    np.testing.assert_allclose(pava(x, [5, 1, 2, 3]), x, rtol=0, atol=1e-15)


def test_pava_rejects_bad_weights():
    with pytest.raises(ValueError):
        pava([0.1, 0.2], [1.0, 0.0])
    with pytest.raises(ValueError):
        pava([0.1, 0.2], [1.0])


def test_pava_matches_exhaustive_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(500):
        j = int(rng.integers(1, 9))
        x = rng.uniform(0, 1, j)
        w = rng.integers(1, 60, j).astype(float)
        worst = max(worst, float(np.max(np.abs(pava(x, w) - isotonic_exhaustive(x, w)))))
    assert worst <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=10),
       st.data())
def test_pava_idempotent_and_monotone(values, data):
    w = data.draw(st.lists(st.floats(0.5, 50), min_size=len(values), max_size=len(values)))
    once = pava(values, w)
    assert np.all(np.diff(once) >= -1e-12)
    np.testing.assert_allclose(pava(once, w), once, atol=1e-12)
    # Isotonic regression preserves the weighted total.
    assert np.isclose(np.dot(once, w), np.dot(values, w), atol=1e-9)


def test_piecewise_pi_bcme(bcme):
    fit = PavaFit.from_data(bcme)
    assert piecewise_pi(fit, 0.05) == pytest.approx(0.5 / 41, abs=1e-12)
    assert piecewise_pi(fit, 0.05) == pytest.approx(0.01220, abs=5e-6)
    assert piecewise_pi(fit, 0.2) == pytest.approx(3 / 26, abs=1e-15)
    with pytest.raises(OutsideDesignRange):
        piecewise_pi(fit, 1.01)


def _linear_crossing(d0, d1, e0, e1, q):
    return d0 + (q - e0) * (d1 - d0) / (e1 - e0)


def test_nonpar_bmd_bcme_reference_values(bcme):
    fit = PavaFit.from_data(bcme)
    # Zero background: extra risk equals the isotonic probabilities.
    assert nonpar_bmd_value(fit, 0.01) == pytest.approx(_linear_crossing(0, 0.1, 0, 1 / 41, 0.01), abs=1e-14)
    assert nonpar_bmd_value(fit, 0.05) == pytest.approx(_linear_crossing(0.1, 0.2, 1 / 41, 3 / 26, 0.05), abs=1e-14)
    assert nonpar_bmd_value(fit, 0.10) == pytest.approx(_linear_crossing(0.1, 0.2, 1 / 41, 3 / 26, 0.10), abs=1e-14)
    for q, ref in ((0.01, 0.041), (0.05, 0.128), (0.10, 0.183)):
        assert nonpar_bmd_value(fit, q) == pytest.approx(ref, abs=0.002)


def test_tabulated_counts_do_not_reproduce_reference_nonpar(bcme_tabulated):
    fit = PavaFit.from_data(bcme_tabulated)
    assert nonpar_bmd_value(fit, 0.05) == pytest.approx(0.163, abs=1e-3)
    assert nonpar_bmd_value(fit, 0.10) == pytest.approx(0.244, abs=1e-3)
    assert abs(nonpar_bmd_value(fit, 0.05) - 0.128) > 0.02


def test_nonpar_bmd_identity_curve():
    d = np.linspace(0, 1, 6)
    fit = PavaFit(d, d.copy(), np.ones(6))
    for q in (0.01, 0.2, 0.5, 0.99):
        assert nonpar_bmd_value(fit, q) == pytest.approx(q, abs=1e-14)


def test_nonpar_bmd_with_background():
    fit = PavaFit(np.array([0.0, 1.0]), np.array([0.2, 0.6]), np.ones(2))
    # Extra risk at d=1 is 0.5, so q=0.25 sits halfway.
    assert nonpar_bmd_value(fit, 0.25) == pytest.approx(0.5, abs=1e-14)


def test_nonpar_bmd_exact_knot_hit():
    fit = PavaFit(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.25, 0.5]), np.ones(3))
    assert nonpar_bmd_value(fit, 0.25) == 0.5


def test_nonpar_bmd_unattainable_and_bad_q(bcme):
    fit = PavaFit.from_data(bcme)
    with pytest.raises(BmrUnattainable):
        nonpar_bmd_value(fit, 0.7)
    with pytest.raises(ValueError):
        nonpar_bmd_value(fit, 0.0)


def test_nonpar_bmd_estimate_carries_scale(bcme):
    est = nonpar_bmd(PavaFit.from_data(bcme), 0.05)
    assert est.estimator == "NONPAR"
    assert est.provenance == "PAVA"
    assert est.dose_original == pytest.approx(100 * est.dose)


def test_pava_fit_pools_non_monotone_data():
    data = QuantalDataset(np.array([0.0, 0.5, 1.0]), np.array([10, 10, 10]), np.array([2, 1, 5]))
    fit = PavaFit.from_data(data)
    np.testing.assert_allclose(fit.probs, [0.15, 0.15, 0.5], atol=1e-15)
    np.testing.assert_allclose(fit.extra_risk_at_knots(), [0, 0, 0.35 / 0.85], atol=1e-15)
