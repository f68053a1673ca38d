"""Launch of the transport solution from asymptotic data at t = -inf.

Writing the force as ``sigma = sigma0 + phi``, the characteristics near the
spinodal peak are ``X(t, K) = x0 + K e^{-at} + Y(K, t)`` and the extremal ones
are ``X_pm(t) = x_pm + Y_pm(t)``.  The corrections solve causal fixed-point
equations driven by ``phi``; the constraint then turns into ``L phi = W(phi)``,
solved by Picard iteration of ``phi <- G * W(phi)`` in the weighted norm
``sup |phi(t)| e^{(2a+delta) t}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from scipy.special import erfc

from .errors import ContractionError, OrderingError
from .green import (
    ConvolutionKernels,
    GreenFunction,
    Sampled,
    apply_L,
    build_green,
    causal_convolve,
    invert_via_green,
    uniform_grid,
)
from .potential import PotentialModel, WellPreparedData
from .transport import CharacteristicEnsemble, gauss_hermite, symmetric_sum

_CHUNK = 33
_NOISE = 1e-13

_SERIES_CUTOFF = 1e-4


def taylor_remainder(model: PotentialModel, x: float, d: np.ndarray, slope: float) -> np.ndarray:
    """``H'(x+d) - H'(x) - slope*d`` with ``slope = H''(x)``.

    Small displacements use the cubic Taylor polynomial, because ``x + d``
    rounds to ``x`` long before the remainder itself becomes negligible.
    """
    d = np.asarray(d, dtype=float)
    x = float(x)
    h1 = float(model.dH(np.float64(x)))
    direct = model.dH(x + d) - h1 - slope * d
    h3 = float(model.d3H(np.float64(x)))
    h4 = float(model.d4H(np.float64(x)))
    series = d * d * (0.5 * h3 + (h4 / 6.0) * d)
    return np.where(np.abs(d) < _SERIES_CUTOFF, series, direct)


def curvature_increment(model: PotentialModel, x: float, d: np.ndarray) -> np.ndarray:
    """``H''(x+d) - H''(x)``, by its quadratic Taylor polynomial for small ``d``."""
    d = np.asarray(d, dtype=float)
    x = float(x)
    direct = model.d2H(x + d) - float(model.d2H(np.float64(x)))
    h3 = float(model.d3H(np.float64(x)))
    h4 = float(model.d4H(np.float64(x)))
    series = d * (h3 + 0.5 * h4 * d)
    return np.where(np.abs(d) < _SERIES_CUTOFF, series, direct)


def q_cdf(y):
    """Gaussian distribution function ``(1/sqrt(pi)) int_{-inf}^y exp(-s^2) ds``."""
    val = 0.5 * erfc(-np.asarray(y, dtype=float))
    return val if np.ndim(val) else float(val)


def q_density(y):
    """``Q'(y) = exp(-y^2)/sqrt(pi)``."""
    y = np.asarray(y, dtype=float)
    return np.exp(-y * y) / np.sqrt(np.pi)


@dataclass(frozen=True)
class AsymptoticParams:
    """Launch horizon, weighted class and discretization.

    ``delta=None`` selects ``min(|a|, b)/4`` for the data at hand.  The grid
    starts at ``-horizon/|a|`` (or one unit left of ``t0`` if that is
    earlier); beyond it every source is a pure ``e^{-2at}`` tail up to a
    relative error ``e^{-horizon}``.
    """

    t0: float = -10.0
    delta: Optional[float] = None
    M: float = 10.0
    dt: float = 1e-3
    nodes: int = 129
    horizon: float = 30.0
    tol: float = 1e-10
    max_iter: int = 100
    inner_tol: float = 1e-12
    inner_max_iter: int = 200
    clamp_margin: float = 1e-9

    def resolved_delta(self, data: WellPreparedData) -> float:
        return self.delta if self.delta is not None else min(abs(data.a), data.b) / 4.0

    def check(self, data: WellPreparedData) -> None:
        d = self.resolved_delta(data)
        if not self.t0 < 0:
            raise ValueError("t0 must be negative")
        if not d > 0:
            raise ValueError("delta must be positive")
        if not 2 * abs(data.a) - d > 0:
            raise ValueError("need 2|a| - delta > 0")
        if self.M <= 0 or self.dt <= 0:
            raise ValueError("M and dt must be positive")


@dataclass
class _Problem:
    model: PotentialModel
    data: WellPreparedData
    params: AsymptoticParams
    kernels: ConvolutionKernels
    green: GreenFunction
    t: np.ndarray
    K: np.ndarray
    w: np.ndarray
    delta: float

    @property
    def rate(self) -> float:
        return -2.0 * self.data.a

    def phi_weight(self) -> np.ndarray:
        return np.exp((2 * self.data.a + self.delta) * self.t)

    def y_weight(self) -> np.ndarray:
        return np.exp((self.data.a - self.delta) * self.t)


def _problem(model: PotentialModel, data: WellPreparedData, params: AsymptoticParams) -> _Problem:
    params.check(data)
    kernels = ConvolutionKernels(data.a, data.b, data.m)
    green = build_green(kernels)
    t_left = min(-params.horizon / abs(data.a), params.t0 - 1.0)
    t = uniform_grid(t_left, params.t0, params.dt)
    K, w = gauss_hermite(params.nodes)
    return _Problem(model, data, params, kernels, green, t, K, w, params.resolved_delta(data))


def _with_left_tail(t: np.ndarray, values: np.ndarray, rate: float) -> Sampled:
    coef = values[..., 0] * np.exp(-rate * t[0])
    return Sampled(t, values, coef, rate)


def _wnorm(values: np.ndarray, weight: np.ndarray) -> float:
    return float(np.max(np.abs(values) * weight)) if values.size else 0.0


def extremal_fixpoint(
    model: PotentialModel,
    data: WellPreparedData,
    phi: Sampled,
    side: Literal["plus", "minus"],
    params: AsymptoticParams = AsymptoticParams(),
    start: Optional[np.ndarray] = None,
) -> Tuple[Sampled, Dict[str, float]]:
    """Correction ``Y`` of an extremal characteristic ``x_pm + Y``.

    Solves ``Y = U_c[phi - rho(Y)]`` with ``c = H''(x_pm)`` and
    ``rho(Y) = H'(x_pm + Y) - H'(x_pm) - c Y``.

    Returns:
        The correction and a dict with the iteration count, the last
        contraction ratio and the class margin ``sup |Y| e^{(a-delta)t}``.

    Raises:
        ContractionError: If the iteration stops contracting ("t0 not
            negative enough").
    """
    x_ext, c = (data.x_plus, data.b) if side == "plus" else (data.x_minus, data.b_minus)
    delta = params.resolved_delta(data)
    t = phi.t
    weight = np.exp((data.a - delta) * t)
    rate = phi.tail_rate if phi.tail_rate is not None else -2.0 * data.a
    y = np.zeros_like(t) if start is None else start.copy()
    prev = None
    ratio = 0.0
    for it in range(1, params.inner_max_iter + 1):
        rho = taylor_remainder(model, x_ext, y, c)
        y_new = causal_convolve(_with_left_tail(t, phi.values - rho, rate), c).values
        diff = _wnorm(y_new - y, weight)
        if prev is not None and prev > 0 and diff > _NOISE * max(1.0, _wnorm(y_new, weight)):
            ratio = diff / prev
            if ratio >= 1.0:
                raise ContractionError(f"t0 not negative enough: extremal ratio {ratio:.3g}")
        y, prev = y_new, diff
        if diff <= params.inner_tol:
            break
    else:
        raise ContractionError("t0 not negative enough: extremal iteration did not settle")
    info = {"iterations": it, "ratio": ratio, "class_margin": _wnorm(y, weight)}
    return _with_left_tail(t, y, rate), info


def _interior(
    prob: _Problem, phi: Sampled, start: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, Dict[str, float]]:
    """Corrections ``Y(K, t)`` for all nodes, shape ``(nodes, len(t))``."""
    d, t, a = prob.data, prob.t, prob.data.a
    weight = prob.y_weight()
    growth = np.exp(-a * t)
    out = np.empty((prob.K.size, t.size))
    iters, ratio = 0, 0.0
    for lo in range(0, prob.K.size, _CHUNK):
        Kc = prob.K[lo : lo + _CHUNK, None]
        lin = Kc * growth
        y = np.zeros((Kc.shape[0], t.size)) if start is None else start[lo : lo + _CHUNK].copy()
        prev = None
        for it in range(1, prob.params.inner_max_iter + 1):
            rho = taylor_remainder(prob.model, d.x0, lin + y, a)
            y_new = causal_convolve(_with_left_tail(t, phi.values - rho, prob.rate), a).values
            diff = _wnorm(y_new - y, weight)
            if prev is not None and prev > 0 and diff > _NOISE * max(1.0, _wnorm(y_new, weight)):
                r = diff / prev
                ratio = max(ratio, r)
                if r >= 1.0:
                    raise ContractionError(f"t0 not negative enough: interior ratio {r:.3g}")
            y, prev = y_new, diff
            if diff <= prob.params.inner_tol:
                break
        else:
            raise ContractionError("t0 not negative enough: interior iteration did not settle")
        iters = max(iters, it)
        out[lo : lo + _CHUNK] = y
    return out, {"iterations": iters, "ratio": ratio}


def _variational(prob: _Problem, Y: np.ndarray) -> np.ndarray:
    """``Z = dY/dK`` from ``Z = U_a[-(H''(X) - a)(e^{-at} + Z)]``."""
    d, t, a = prob.data, prob.t, prob.data.a
    growth = np.exp(-a * t)
    weight = prob.y_weight()
    out = np.empty_like(Y)
    for lo in range(0, prob.K.size, _CHUNK):
        Kc = prob.K[lo : lo + _CHUNK, None]
        curv = curvature_increment(prob.model, d.x0, Kc * growth + Y[lo : lo + _CHUNK])
        z = np.zeros_like(curv)
        for _ in range(prob.params.inner_max_iter):
            src = -curv * (growth + z)
            z_new = causal_convolve(_with_left_tail(t, src, prob.rate), a).values
            diff = _wnorm(z_new - z, weight)
            z = z_new
            if diff <= prob.params.inner_tol:
                break
        out[lo : lo + _CHUNK] = z
    return out


def remainders(
    model: PotentialModel,
    data: WellPreparedData,
    Y0: np.ndarray,
    Yplus: np.ndarray,
    YK: Optional[np.ndarray] = None,
    K: Optional[np.ndarray] = None,
    t: Optional[np.ndarray] = None,
):
    """Taylor remainders of the force around the launch states.

    ``rho0 = H'(x0+Y0) - H'(x0) - a Y0``, ``rho_plus`` likewise at ``x_plus``
    with ``b``, and for each node ``rho(K) = H'(X) - H'(x0) - a (X - x0)``
    with ``X = x0 + K e^{-at} + Y(K)``.  ``rho(K)`` is returned only when
    ``YK``, ``K`` and ``t`` are given.
    """
    rho0 = taylor_remainder(model, data.x0, Y0, data.a)
    rhop = taylor_remainder(model, data.x_plus, Yplus, data.b)
    if YK is None:
        return rho0, rhop, None
    disp = np.asarray(K)[:, None] * np.exp(-data.a * np.asarray(t)) + YK
    return rho0, rhop, taylor_remainder(model, data.x0, disp, data.a)


def assemble_W(
    data: WellPreparedData,
    t: np.ndarray,
    rho0: np.ndarray,
    rhop: np.ndarray,
    rhoK: np.ndarray,
    weights: np.ndarray,
) -> Sampled:
    """Forcing of the constraint equation ``L phi = W``.

    ``W = m(rho0 - a U_a rho0) + (1-m)(rho_plus - b U_b rho_plus)
    + m a (U_a rho0 - U_a <rho(K)>) + m (<rho(K)> - rho0)``, where ``<.>``
    is the Gauss-Hermite average against ``Q'(K)``.
    """
    m, a, b = data.m, data.a, data.b
    rate = -2.0 * a
    avg = symmetric_sum(weights, rhoK)
    ua0 = causal_convolve(_with_left_tail(t, rho0, rate), a).values
    ubp = causal_convolve(_with_left_tail(t, rhop, rate), b).values
    uak = causal_convolve(_with_left_tail(t, avg, rate), a).values
    W = m * (rho0 - a * ua0) + (1 - m) * (rhop - b * ubp) + m * a * (ua0 - uak) + m * (avg - rho0)
    return _with_left_tail(t, W, rate)


@dataclass
class FixpointState:
    """Result of the contraction for ``phi = sigma - sigma0``.

    Attributes:
        phi: The fixed point on the launch grid.
        iterations: Number of outer iterations.
        diffs: Successive-difference norms in the weighted norm.
        ratio: Contraction ratio of the first two Picard steps.
        norm: Weighted norm of ``phi``.
        residual: ``||L phi - W(phi)||`` in the weighted norm.
        theta2: Decay root of the Green's function.
        delta: Weight offset used.
    """

    phi: Sampled
    iterations: int
    diffs: List[float]
    ratio: float
    norm: float
    residual: float
    theta2: float
    delta: float
    W: Sampled = field(repr=False)
    Y0: np.ndarray = field(repr=False)
    Yplus: np.ndarray = field(repr=False)
    YK: np.ndarray = field(repr=False)
    inner: Dict[str, float] = field(default_factory=dict)
    _problem: Optional[_Problem] = field(default=None, repr=False)


def _evaluate(prob: _Problem, phi: Sampled, warm: Optional[Tuple[np.ndarray, np.ndarray]]):
    yk, info_k = _interior(prob, phi, None if warm is None else warm[0])
    center = prob.K.size // 2
    y0 = yk[center]
    yp, info_p = extremal_fixpoint(prob.model, prob.data, phi, "plus", prob.params, None if warm is None else warm[1])
    rho0, rhop, rhoK = remainders(prob.model, prob.data, y0, yp.values, yk, prob.K, prob.t)
    W = assemble_W(prob.data, prob.t, rho0, rhop, rhoK, prob.w)
    return W, yk, y0, yp.values, {"interior_ratio": info_k["ratio"], "extremal_ratio": info_p["ratio"]}


def solve_phi(model: PotentialModel, data: WellPreparedData, params: AsymptoticParams = AsymptoticParams()) -> FixpointState:
    """Picard iteration ``phi <- G * W(phi)`` from ``phi = 0``.

    Raises:
        ContractionError: "contraction failed" if successive differences stop
            shrinking, "class escape" if ``||phi|| > M``.
    """
    prob = _problem(model, data, params)
    weight = prob.phi_weight()
    phi = Sampled(prob.t, np.zeros_like(prob.t), 0.0, prob.rate)
    diffs: List[float] = []
    ratios: List[float] = []
    warm = None
    inner: Dict[str, float] = {}
    for it in range(1, params.max_iter + 1):
        W, yk, y0, yp, inner = _evaluate(prob, phi, warm)
        warm = (yk, yp)
        new = invert_via_green(prob.green, W)
        diff = _wnorm(new.values - phi.values, weight)
        nrm = _wnorm(new.values, weight)
        if nrm > params.M:
            raise ContractionError(f"class escape: ||phi|| = {nrm:.3g} > M = {params.M}")
        if diffs and diffs[-1] > 0 and diff > _NOISE * max(nrm, 1e-300):
            ratios.append(diff / diffs[-1])
            if ratios[-1] >= 1.0:
                raise ContractionError(f"contraction failed: ratio {ratios[-1]:.3g} (use a smaller t0)")
        diffs.append(diff)
        phi = new
        if diff <= params.tol:
            break
    else:
        raise ContractionError(f"contraction failed: no convergence in {params.max_iter} iterations")
    W, yk, y0, yp, inner = _evaluate(prob, phi, (yk, yp))
    residual = _wnorm(apply_L(prob.kernels, phi).values - W.values, weight)
    # the first step has the largest signal; later ratios approach the noise floor
    ratio = diffs[1] / diffs[0] if len(diffs) > 1 and diffs[0] > 0 else 0.0
    return FixpointState(
        phi=phi,
        iterations=it,
        diffs=diffs,
        ratio=ratio,
        norm=_wnorm(phi.values, weight),
        residual=residual,
        theta2=prob.green.theta2,
        delta=prob.delta,
        W=W,
        Y0=y0,
        Yplus=yp,
        YK=yk,
        inner=inner,
        _problem=prob,
    )


@dataclass
class LaunchProfile:
    """Corrections and frozen transported values at the launch.

    ``R_values = m Q(K)`` is the distribution carried by each node; the atom
    of mass ``1 - m`` rides on the right extremal characteristic.
    ``jacobian`` is ``dX/dK`` at ``t0``.
    """

    t: np.ndarray
    Y0: np.ndarray
    Yplus: np.ndarray
    Yminus: np.ndarray
    YK: np.ndarray
    K: np.ndarray
    weights: np.ndarray
    R_values: np.ndarray
    atom: float
    jacobian: np.ndarray
    clamped: int
    class_checks: Dict[str, float]
    node_constants: np.ndarray


def seed_ensemble(
    model: PotentialModel,
    data: WellPreparedData,
    params: AsymptoticParams,
    state: FixpointState,
) -> Tuple[LaunchProfile, CharacteristicEnsemble]:
    """Positions of all characteristics at ``t0``.

    Raises:
        OrderingError: If the seeded positions are not strictly increasing.
    """
    prob = state._problem if state._problem is not None else _problem(model, data, params)
    t, a = prob.t, data.a
    ym, _ = extremal_fixpoint(model, data, state.phi, "minus", params)
    z = _variational(prob, state.YK)
    g0 = np.exp(-a * t[-1])
    X = data.x0 + prob.K * g0 + state.YK[:, -1]
    jac = g0 + z[:, -1]
    xm = data.x_minus + ym.values[-1]
    xp = data.x_plus + state.Yplus[-1]
    lo, hi = xm + params.clamp_margin, xp - params.clamp_margin
    clamped = int(np.count_nonzero((X < lo) | (X > hi)))
    X = np.clip(X, lo, hi)
    if np.any(np.diff(X) <= 0) or not xm < X[0] or not X[-1] < xp:
        raise OrderingError("characteristic ordering broken at seed")
    if np.any(jac <= 0):
        raise OrderingError("characteristic ordering broken at seed (dX/dK <= 0)")

    yw = prob.y_weight()
    pw = prob.phi_weight()
    checks = {
        "phi_class": _wnorm(state.phi.values, pw),
        "Y0_class": _wnorm(state.Y0, yw),
        "Yplus_class": _wnorm(state.Yplus, yw),
        "Yminus_class": _wnorm(ym.values, yw),
        "M": params.M,
    }
    node_constants = np.max(np.abs(state.YK) * yw, axis=1)
    profile = LaunchProfile(
        t=t,
        Y0=state.Y0,
        Yplus=state.Yplus,
        Yminus=ym.values,
        YK=state.YK,
        K=prob.K,
        weights=prob.w,
        R_values=data.m * q_cdf(prob.K),
        atom=1.0 - data.m,
        jacobian=jac,
        clamped=clamped,
        class_checks=checks,
        node_constants=node_constants,
    )
    ens = CharacteristicEnsemble(
        K=prob.K,
        weights=prob.w,
        X=X,
        x_minus=float(xm),
        x_plus=float(xp),
        m=data.m,
        t=float(t[-1]),
        jacobian=jac,
    )
    return profile, ens
