import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import erf

from masssplit.errors import ContractionError
from masssplit.green import uniform_grid
from masssplit.potential import prepare
from masssplit.wellposed import (
    AsymptoticParams,
    curvature_increment,
    extremal_fixpoint,
    q_cdf,
    q_density,
    solve_phi,
    taylor_remainder,
)
from masssplit.green import Sampled

from _runs import GENERIC, SYMMETRIC, launch, reference


def test_q_cdf_values():
    assert q_cdf(0.0) == 0.5
    oracle = quad(lambda s: math.exp(-s * s) / math.sqrt(math.pi), -np.inf, 1.0)[0]
    assert q_cdf(1.0) == pytest.approx(oracle, abs=1e-12)
    assert q_cdf(1.0) == pytest.approx((1 + erf(1.0)) / 2, abs=1e-15)
    assert quad(q_density, -np.inf, np.inf)[0] == pytest.approx(1.0, abs=1e-12)


def _mp_remainder(x, d):
    # exact slope: a rounded float slope leaves an eps*d error comparable to the remainder
    with mpmath.workdps(50):
        f = lambda y: y - 2 * mpmath.tanh(y)  # noqa: E731
        x, d = mpmath.mpf(x), mpmath.mpf(d)
        return float(f(x + d) - f(x) - (1 - 2 / mpmath.cosh(x) ** 2) * d)


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-30, -1))
def test_taylor_remainder_relative_accuracy(x, log_d):
    model, _ = reference()
    slope = float(model.d2H(np.float64(x)))
    for sign in (1.0, -1.0):
        d = sign * 10.0**(log_d / 2)
        got = float(taylor_remainder(model, x, np.array([d]), slope)[0])
        want = _mp_remainder(x, d)
        assert got == pytest.approx(want, rel=1e-6, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-30, -1))
def test_curvature_increment_accuracy(x, log_d):
    model, _ = reference()
    d = 10.0 ** (log_d / 2)
    got = float(curvature_increment(model, x, np.array([d]))[0])
    with mpmath.workdps(50):
        h2 = lambda y: 1 - 2 / mpmath.cosh(y) ** 2  # noqa: E731
        want = float(h2(mpmath.mpf(x) + mpmath.mpf(d)) - h2(mpmath.mpf(x)))
    assert got == pytest.approx(want, rel=1e-6, abs=1e-300)


def test_params_validation():
    model, chart = reference()
    data = prepare(model, chart, **GENERIC)
    with pytest.raises(ValueError, match="t0 must be negative"):
        AsymptoticParams(t0=1.0).check(data)
    with pytest.raises(ValueError, match="delta must be positive"):
        AsymptoticParams(delta=-1.0).check(data)


def test_generic_launch_contracts():
    data, params, state, profile, ens = launch(**GENERIC)
    assert 0.0 < state.ratio < 1.0
    assert state.residual <= 1e-8
    assert state.diffs[-1] <= params.tol
    assert all(b < a for a, b in zip(state.diffs, state.diffs[1:]))
    assert state.norm <= params.M
    assert state.theta2 == pytest.approx(-data.stability, abs=0)


def test_generic_seed_properties():
    data, params, state, profile, ens = launch(**GENERIC)
    assert np.all(np.diff(ens.X) > 0)
    assert ens.x_minus < ens.X[0] and ens.X[-1] < ens.x_plus
    assert profile.clamped == 0
    assert np.all(np.diff(profile.R_values) >= 0)
    assert profile.atom == pytest.approx(1.0 - data.m)
    center = ens.K.size // 2
    assert ens.K[center] == 0.0
    delta = params.resolved_delta(data)
    assert abs(ens.X[center] - data.x0) <= math.exp((-data.a + delta) * params.t0)
    # launch Jacobian against finite differences of the seeded positions
    fd = np.gradient(ens.X, ens.K)
    assert np.max(np.abs(profile.jacobian[5:-5] / fd[5:-5] - 1.0)) < 1e-6
    for key in ("phi_class", "Y0_class", "Yplus_class", "Yminus_class"):
        assert profile.class_checks[key] <= params.M


def test_generic_seed_conserves_moment():
    data, params, state, profile, ens = launch(**GENERIC)
    ell = data.m * np.sum(ens.weights * ens.X) + (1 - data.m) * ens.x_plus
    assert ell == pytest.approx(data.ell_star, abs=1e-9)


def test_symmetric_launch_is_exact():
    data, params, state, profile, ens = launch(**SYMMETRIC)
    assert np.all(state.phi.values == 0.0)
    assert np.all(ens.X == -ens.X[::-1])
    assert ens.x_minus == -ens.x_plus


def test_extremal_correction_vanishes_without_forcing():
    model, chart = reference()
    data = prepare(model, chart, **GENERIC)
    t = uniform_grid(-40.0, -10.0, 1e-2)
    y, info = extremal_fixpoint(model, data, Sampled(t, np.zeros_like(t), 0.0, -2 * data.a), "plus")
    assert np.all(y.values == 0.0)


def test_contraction_failure_close_to_zero():
    model, chart = reference()
    data = prepare(model, chart, **GENERIC)
    with pytest.raises(ContractionError, match="t0 not negative enough"):
        solve_phi(model, data, AsymptoticParams(t0=-0.5))


def test_class_escape():
    model, chart = reference()
    data = prepare(model, chart, **GENERIC)
    with pytest.raises(ContractionError, match="class escape"):
        solve_phi(model, data, AsymptoticParams(t0=-10.0, M=1e-6))
