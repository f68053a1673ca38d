import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.integrate import quad

from masssplit.errors import StabilityError
from masssplit.green import (
    ConvolutionKernels,
    Sampled,
    apply_L,
    build_green,
    causal_convolve,
    charfn,
    charfn_factorized,
    invert_via_green,
    numeric_theta2,
    sampled_with_tail,
    uniform_grid,
    verify_green,
)


@st.composite
def stable_kernels(draw):
    a = -draw(st.floats(0.05, 3.0))
    b = draw(st.floats(0.05, 3.0))
    m = draw(st.floats(0.02, 1.0))
    assume((1 - m) * a + m * b > 0.05)
    return ConvolutionKernels(a, b, m)


def mp_charfn(k, th):
    return 1 - k.m * k.a / (k.a + th) - (1 - k.m) * k.b / (k.b + th)


def test_spec_example_roots():
    k = ConvolutionKernels(-0.5, 1.0, 0.8)
    g = build_green(k)
    assert g.theta2 == pytest.approx(-0.7, abs=1e-15)
    assert charfn(k, -0.7) == pytest.approx(0.0, abs=1e-12)
    assert numeric_theta2(k) == pytest.approx(-0.7, abs=1e-12)
    assert charfn(k, 0.0) == 0.0
    assert build_green(ConvolutionKernels(-0.5, 1.0, 1.0)).theta2 == -1.0


def test_pole_rejected():
    k = ConvolutionKernels(-0.5, 1.0, 0.8)
    with pytest.raises(ValueError, match="pole of C"):
        charfn(k, 0.5)


def test_unstable_kernels_rejected():
    with pytest.raises(StabilityError, match="stability violated"):
        ConvolutionKernels(-0.9, 0.9, 0.4)


@settings(max_examples=50, deadline=None)
@given(stable_kernels(), st.floats(-5, 5))
def test_factorized_form(k, th):
    assume(min(abs(th + k.a), abs(th + k.b)) > 1e-3)
    assert charfn(k, th) == pytest.approx(charfn_factorized(k, th), rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(stable_kernels())
def test_residues_match_numeric_derivative(k):
    g = build_green(k)
    for theta, res in ((0.0, g.res_c1), (g.theta2, g.res_c2)):
        if k.m == 1.0 and theta == g.theta2:
            # the decay root cancels against the pole -b
            assert res == 0.0
            continue
        # residue of 1/C at a simple root
        with mpmath.workdps(30):
            d = mpmath.diff(lambda th: mp_charfn(k, th), mpmath.mpf(theta))
        assert res == pytest.approx(float(1 / d), rel=1e-9, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(stable_kernels())
def test_green_laplace_transform(k):
    # G_r has transform 1/C - 1; check at a real point right of all poles
    g = build_green(k)
    r = 1.0 + max(0.0, -k.a)
    lhs = quad(lambda x: float(g.regular(x)) * np.exp(-r * x), 0, np.inf, limit=200)[0]
    assert lhs == pytest.approx(1.0 / charfn(k, r) - 1.0, rel=1e-8, abs=1e-10)


def test_verify_green_generic():
    assert verify_green(build_green(ConvolutionKernels(-0.9177011, 0.8935191, 0.8))) <= 1e-8


def test_causal_convolve_exponential():
    t = uniform_grid(-5.0, 2.0, 1e-3)
    f = sampled_with_tail(t, np.exp(1.5 * t), 1.5)
    for c in (-0.9, 0.0, 0.7):
        out = causal_convolve(f, c)
        assert np.max(np.abs(out.values * (1.5 + c) / np.exp(1.5 * t) - 1.0)) < 1e-11
        assert out.tail_coef == pytest.approx(1.0 / (1.5 + c))


def test_causal_convolve_rejects_bad_tail():
    t = uniform_grid(-1.0, 0.0, 1e-2)
    with pytest.raises(ValueError, match="non-integrable tail"):
        causal_convolve(sampled_with_tail(t, np.exp(0.5 * t), 0.5), -0.9)
    with pytest.raises(ValueError, match="tail descriptor required"):
        causal_convolve(Sampled(t, np.ones_like(t), 1.0, None), 1.0)


def test_causal_convolve_long_grid_no_overflow():
    # exponent budget forces several blocks
    t = uniform_grid(-300.0, 0.0, 1e-3)
    f = sampled_with_tail(t, np.exp(2.0 * t), 2.0)
    out = causal_convolve(f, 1.5)
    assert np.all(np.isfinite(out.values))
    assert np.max(np.abs(out.values - np.exp(2.0 * t) / 3.5) / np.exp(2.0 * t)) < 1e-11


@settings(max_examples=20, deadline=None)
@given(stable_kernels(), st.floats(0.1, 4.0))
def test_eigenfunction_identity(k, extra):
    kappa = max(0.0, -k.a, -k.b) + extra
    t = uniform_grid(-4.0, 1.0, 1e-3)
    f = sampled_with_tail(t, np.exp(kappa * t), kappa)
    got = apply_L(k, f).values
    want = charfn(k, kappa) * np.exp(kappa * t)
    assert np.max(np.abs(got - want) / np.exp(kappa * t)) <= 1e-8


@settings(max_examples=20, deadline=None)
@given(stable_kernels(), st.floats(0.1, 3.0))
def test_round_trip(k, extra):
    kappa = max(0.0, -k.a, -k.b) + extra
    t = uniform_grid(-4.0, 1.0, 1e-3)
    w = sampled_with_tail(t, np.exp(kappa * t), kappa)
    back = apply_L(k, invert_via_green(build_green(k), w))
    assert np.max(np.abs(back.values - w.values)) <= 1e-6
