import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from masssplit.errors import BranchDomainError, ConvergenceError
from masssplit.longtime import (
    SeriesTable,
    build_report,
    classify_case,
    confinement_band,
    default_eta,
    detect_equilibrium,
    hypothesis_status,
    limit_triple,
    spinodal_decay,
    uniqueness_probe,
)
from masssplit.potential import branch_solve
from masssplit.transport import CSV_COLUMNS

from _runs import reference


def synthetic(t, sigma, D, ridge=None, masses=(0.1, 0.2, 0.7)):
    n = t.size
    cols = {name: np.zeros(n) for name in CSV_COLUMNS}
    cols["t"] = t
    cols["sigma"] = np.broadcast_to(sigma, (n,)).astype(float)
    cols["dissipation"] = np.broadcast_to(D, (n,)).astype(float)
    cols["energy"] = -np.concatenate(([0.0], np.cumsum(0.5 * (cols["dissipation"][1:] + cols["dissipation"][:-1]) * np.diff(t))))
    cols["ridge_density"] = np.full(n, np.nan) if ridge is None else np.asarray(ridge, dtype=float)
    for key, v in zip(("m_minus", "m_zero", "m_plus"), masses):
        cols[key] = np.full(n, v)
        cols["node_" + key] = np.full(n, v)
    return SeriesTable(cols)


def test_stationary_series_stops_at_first_snapshot():
    t = np.linspace(0.0, 10.0, 101)
    stop = detect_equilibrium(synthetic(t, 0.1, 0.0))
    assert stop.converged and stop.index == 0 and stop.t_stop == 0.0
    assert stop.integral_D == 0.0


def test_stop_needs_a_full_window():
    t = np.linspace(0.0, 10.0, 101)
    D = np.where(t < 7.0, 1.0, 0.0)
    stop = detect_equilibrium(synthetic(t, 0.1, D), window=5.0)
    assert not stop.converged and stop.message == "not converged: extend t_end"
    stop = detect_equilibrium(synthetic(t, 0.1, D), window=2.0)
    assert stop.converged and stop.t_stop == pytest.approx(7.0)


def test_dissipation_integral_is_exact_for_exponentials():
    t = np.linspace(0.0, 40.0, 4001)
    stop = detect_equilibrium(synthetic(t, 0.0, np.exp(-t)))
    assert stop.integral_D == pytest.approx(1.0 - math.exp(-40.0), rel=1e-9)


def test_drifting_force_blocks_the_stop():
    t = np.linspace(0.0, 10.0, 101)
    stop = detect_equilibrium(synthetic(t, 1e-6 * t, 0.0), tol_D=1e-8)
    assert not stop.converged


def test_csv_round_trip(tmp_path):
    t = np.linspace(0.0, 1.0, 11)
    tab = synthetic(t, 0.25, np.exp(-t))
    path = tmp_path / "s.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for i in range(t.size):
            fh.write(",".join(repr(float(tab.column(c)[i])) for c in CSV_COLUMNS) + "\n")
    back = SeriesTable.from_csv(str(path))
    for c in CSV_COLUMNS:
        np.testing.assert_array_equal(back.column(c), tab.column(c))


def test_limit_triple_on_stationary_input():
    model, chart = reference()
    s = 0.1
    xs = [branch_solve(chart, s, b) for b in ("minus", "zero", "plus")]
    masses = (0.2, 0.3, 0.5)
    ell = sum(mi * xi for mi, xi in zip(masses, xs))
    trip = limit_triple(model, chart, s, masses, ell)
    assert trip.constraint_residual <= 1e-14
    assert trip.slope_residual <= 1e-12
    assert (trip.x_minus, trip.x_zero, trip.x_plus) == tuple(xs)


def test_limit_triple_single_phase():
    model, chart = reference()
    trip = limit_triple(model, chart, 0.9, (0.0, 0.0, 1.0), 0.0)
    assert math.isnan(trip.x_minus) and math.isnan(trip.x_zero)
    assert trip.m_plus == 1.0
    assert float(model.dH(trip.x_plus)) == pytest.approx(0.9, abs=1e-12)


def test_limit_triple_rejects_inadmissible_force():
    model, chart = reference()
    # NaN lies in no branch domain
    with pytest.raises(BranchDomainError, match="no admissible limit"):
        limit_triple(model, chart, float("nan"), (0.0, 0.0, 1.0), 0.0)


def test_confinement_band_rate():
    model, chart = reference()
    eta = default_eta(chart)
    lo, hi, rate = confinement_band(model, chart, eta)
    assert chart.x_star_minus < lo < 0.0 < hi < chart.x_star_plus
    # |H''| is smallest at the ends of the band for this potential
    assert rate == pytest.approx(abs(float(model.d2H(hi))), rel=1e-6)
    with pytest.raises(ValueError, match="no confinement band"):
        confinement_band(model, chart, 1.0)


def test_constant_ridge_fails_and_fast_decay_passes():
    model, chart = reference()
    eta = default_eta(chart)
    t = np.linspace(0.0, 20.0, 201)
    fit = spinodal_decay(synthetic(t, 0.0, 0.0, ridge=np.ones_like(t)), chart, model, eta)
    assert fit.verdict == "FAIL" and fit.rate == pytest.approx(0.0, abs=1e-12)
    fit = spinodal_decay(synthetic(t, 0.0, 0.0, ridge=np.exp(-2.0 * t)), chart, model, eta)
    assert fit.verdict == "PASS" and fit.rate == pytest.approx(2.0, rel=1e-9)


def test_ridge_below_floor_is_vacuous_pass():
    model, chart = reference()
    t = np.linspace(0.0, 20.0, 201)
    fit = spinodal_decay(synthetic(t, 0.0, 0.0, ridge=np.full_like(t, 1e-20)), chart, model, default_eta(chart))
    assert fit.verdict == "decayed below floor" and fit.passed


def test_unconfined_force_violates_hypothesis():
    model, chart = reference()
    t = np.linspace(0.0, 20.0, 201)
    fit = spinodal_decay(synthetic(t, 0.6, 0.0, ridge=np.ones_like(t)), chart, model, default_eta(chart))
    assert fit.verdict.startswith("hypothesis violated") and not fit.passed


@settings(max_examples=100, deadline=None)
@given(st.floats(-1.0, 1.0))
def test_classification_partitions_forces(s):
    _, chart = reference()
    eta = default_eta(chart)
    case = classify_case(s, np.array([s]), chart, eta)
    hi, lo = chart.sigma_star_plus, chart.sigma_star_minus
    if abs(s) >= hi + eta:
        assert case == "case 1"
    elif abs(s) <= hi - eta:
        assert case == "case 2"
    elif min(abs(s - hi), abs(s - lo)) < eta:
        assert case == "case 4"


def test_crossing_tail_is_case_three():
    _, chart = reference()
    eta = default_eta(chart)
    hi = chart.sigma_star_plus
    assert classify_case(hi, np.array([hi - 1e-3, hi + 1e-3, hi]), chart, eta) == "case 3"


def test_hypothesis_status_reference():
    model, chart = reference()
    assert hypothesis_status(model, chart, 0.0) == [
        "hypothesis ell* > x^* not met",
        "hypothesis H''''>0 not met",
    ]
    assert "hypothesis ell* > x^* not met" not in hypothesis_status(model, chart, 2.0)


def test_uniqueness_probe_detects_oscillation():
    model, chart = reference()
    eta = default_eta(chart)
    t = np.linspace(0.0, 10.0, 101)
    tab = synthetic(t, 0.1, 0.0)
    stop = detect_equilibrium(tab)
    assert uniqueness_probe(tab, stop, model, chart, 0.0, eta).agree
    tab.columns["m_plus"] = 0.7 + 0.01 * (-1.0) ** np.arange(t.size)
    verdict = uniqueness_probe(tab, stop, model, chart, 0.0, eta)
    assert not verdict.agree and verdict.max_difference == pytest.approx(0.02)
    assert verdict.message.startswith("non-unique limit detected")
    with pytest.raises(ConvergenceError, match="not converged"):
        uniqueness_probe(tab, detect_equilibrium(synthetic(t, 0.1, 1.0)), model, chart, 0.0, eta)


def test_report_on_stationary_triple():
    model, chart = reference()
    s = 0.1
    masses = (0.2, 0.3, 0.5)
    xs = [branch_solve(chart, s, b) for b in ("minus", "zero", "plus")]
    ell = sum(mi * xi for mi, xi in zip(masses, xs))
    t = np.linspace(0.0, 10.0, 101)
    rep = build_report(synthetic(t, s, 0.0, ridge=np.exp(-3 * t), masses=masses), model, chart, 0.5, ell)
    assert rep.converged and rep.sigma_inf == s
    assert rep.constraint_residual <= 1e-14
    assert rep.m_transfer == pytest.approx(0.0)
    assert rep.case == "case 2"
    assert rep.flags["constraint"] and rep.flags["slopes"] and rep.flags["uniqueness"]
    with pytest.raises(ConvergenceError):
        build_report(synthetic(t, s, 1.0), model, chart, 0.5, ell)
