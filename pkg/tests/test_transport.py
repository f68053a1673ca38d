import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erfc

from masssplit.errors import OrderingError
from masssplit.transport import (
    CSV_COLUMNS,
    CharacteristicEnsemble,
    distribution,
    functionals,
    gauss_hermite,
    run,
    sigma_by_parts,
    sigma_of,
    step,
    symmetric_sum,
)

from _runs import GENERIC, launch, reference


def _ensemble(X, xm, xp, m, n=None):
    X = np.asarray(X, dtype=float)
    K, w = gauss_hermite(X.size if n is None else n)
    return CharacteristicEnsemble(K, w, X, float(xm), float(xp), m, 0.0)


@st.composite
def ensembles(draw):
    n = draw(st.sampled_from([1, 3, 5, 9]))
    m = draw(st.floats(0.05, 1.0))
    gaps = draw(st.lists(st.floats(0.05, 1.0), min_size=n + 1, max_size=n + 1))
    start = draw(st.floats(-3.0, 0.0))
    pos = start + np.concatenate(([0.0], np.cumsum(gaps)))
    return _ensemble(pos[1:-1], pos[0], pos[-1], m)


@pytest.mark.parametrize("n", [1, 2, 33, 101])
def test_gauss_hermite_normalized(n):
    K, w = gauss_hermite(n)
    assert np.sum(w) == pytest.approx(1.0, abs=1e-15)
    assert np.all(K == -K[::-1]) and np.all(w == w[::-1])
    if n >= 33:
        assert np.sum(w * K**2) == pytest.approx(0.5, abs=1e-13)


def test_symmetric_sum_of_odd_values_vanishes():
    K, w = gauss_hermite(61)
    assert symmetric_sum(w, np.sinh(3 * K) + K**5) == 0.0
    assert symmetric_sum(w, np.cos(K)) == pytest.approx(math.exp(-0.25), abs=1e-14)


def test_two_atom_dissipation_closed_form():
    model, chart = reference()
    x1, x2 = -1.3, 2.1
    e = _ensemble([x1], -5.0, x2, 0.5)
    snap = functionals(e, model, chart)
    h1, h2 = float(model.dH(x1)), float(model.dH(x2))
    assert snap.sigma == pytest.approx((h1 + h2) / 2, abs=1e-15)
    assert snap.dissipation == pytest.approx((h1 - h2) ** 2 / 4, abs=1e-14)


def test_point_mass_has_no_dissipation():
    model, chart = reference()
    x = 1.7
    snap = functionals(_ensemble([x], x - 1.0, x, 1.0), model, chart)
    assert snap.dissipation == 0.0
    assert snap.sigma == float(model.dH(x))


@settings(max_examples=50, deadline=None)
@given(ensembles())
def test_force_by_parts_matches_mean(e):
    model, _ = reference()
    s = sigma_of(e, model)
    assert sigma_by_parts(e, model, "plus") == pytest.approx(s, abs=1e-12)
    assert sigma_by_parts(e, model, "minus") == pytest.approx(s, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(ensembles())
def test_moment_conserved_and_energy_decays(e):
    model, chart = reference()
    before = functionals(e, model, chart)
    cur = e
    for _ in range(20):
        cur = step(cur, model, 1e-2)
    after = functionals(cur, model, chart)
    assert after.ell == pytest.approx(before.ell, abs=1e-12)
    assert after.energy <= before.energy + 1e-12
    assert cur.total_mass() == pytest.approx(1.0, abs=1e-15)


def test_crossing_detected():
    model, _ = reference()
    e = _ensemble([0.5, 0.4, 0.6], -2.0, 2.0, 0.5)
    with pytest.raises(OrderingError, match="characteristic crossing"):
        sigma_by_parts(e, model)
    with pytest.raises(OrderingError, match="ordering broken at seed"):
        step(e, model, 1e-3)
    with pytest.raises(ValueError, match="dt must be positive"):
        step(_ensemble([0.0], -1.0, 1.0, 0.5), model, 0.0)


@pytest.fixture(scope="module")
def short_run():
    model, chart = reference()
    data, params, state, profile, ens = launch(**GENERIC)
    return model, chart, data, ens, run(ens, model, chart, ens.t + 3.0)


def test_short_run_invariants(short_run):
    model, chart, data, ens, ts = short_run
    assert np.max(np.abs(ts.trace["ell"] - data.ell_star)) <= 1e-9
    assert np.all(np.diff(ts.trace["energy"]) <= 1e-13)
    assert ts.stats["snapshots"] == len(ts.snapshots) == 31
    snap = ts.snapshots[-1]
    assert snap.m_minus + snap.m_zero + snap.m_plus == pytest.approx(1.0, abs=1e-14)
    assert set(CSV_COLUMNS) <= set(vars(snap))


def test_traced_distribution_matches_nodes(short_run):
    # backward tracing of node positions recovers the labels they carry
    model, _, data, ens, ts = short_run
    fin = ts.final
    k = ts.stats["steps"]
    R = distribution(ts.history, model, k, fin.X)
    assert np.max(np.abs(R - data.m * 0.5 * erfc(-fin.K))) <= 1e-8


def test_run_rejects_bad_horizon(short_run):
    model, chart, _, ens, _ = short_run
    with pytest.raises(ValueError, match="t_end must exceed"):
        run(ens, model, chart, ens.t - 1.0)
