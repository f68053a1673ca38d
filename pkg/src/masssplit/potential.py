"""Double-well potentials, their spinodal chart and the inverse branches of H'.

A potential is described by closed-form evaluators of H and its first four
derivatives.  The admissible class has a bounded perturbation of a linear
force, ``H'(x) = alpha*x + g(x)`` with ``g`` and ``H''`` bounded, and a single
interval ``(x_s, x^s)`` around the origin on which ``H''`` is negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from scipy.optimize import bisect

from .errors import AssumptionError, BranchDomainError, StabilityError

Evaluator = Callable[[np.ndarray], np.ndarray]
Branch = Literal["minus", "zero", "plus"]

PROBE_LO = -50.0
PROBE_HI = 50.0
PROBE_STEP = 1e-2
ROOT_XTOL = 1e-14
ROOT_MAXITER = 200
DEGENERATE_H3 = 1e-8


@dataclass(frozen=True)
class PotentialModel:
    """Closed-form evaluators of a double-well potential.

    Attributes:
        H: The free energy.
        dH: First derivative, the force law.
        d2H: Second derivative.
        d3H: Third derivative.
        d4H: Fourth derivative.
        alpha: Slope of the linear part of ``dH``.
        g_bound: Sup-norm bound on ``dH(x) - alpha*x``; ``None`` means unknown.
        h2_bound: Sup-norm bound on ``d2H``; ``None`` means unknown.
        family: Name under which the model was built.
        params: Parameters of the family.
    """

    H: Evaluator
    dH: Evaluator
    d2H: Evaluator
    d3H: Evaluator
    d4H: Evaluator
    alpha: float
    g_bound: Optional[float] = None
    h2_bound: Optional[float] = None
    family: str = "custom"
    params: Dict[str, float] = field(default_factory=dict)

    def g(self, x: np.ndarray) -> np.ndarray:
        """Bounded part of the force, ``dH(x) - alpha*x``."""
        return self.dH(x) - self.alpha * x


def reference_potential(alpha: float = 1.0, beta: float = 2.0, gamma: float = 1.0) -> PotentialModel:
    """Build ``H'(x) = alpha*x - beta*tanh(gamma*x)``.

    A double well requires ``beta*gamma > alpha``; ``beta = 0`` gives a single
    well, which :func:`validate` reports.
    """
    a, b, c = float(alpha), float(beta), float(gamma)

    def H(x):
        x = np.asarray(x, dtype=float)
        # log(cosh(z)) written to avoid overflow for large |z|
        z = np.abs(c * x)
        logcosh = z + np.log1p(np.exp(-2.0 * z)) - math.log(2.0)
        return 0.5 * a * x * x - (b / c) * logcosh if c != 0.0 else 0.5 * a * x * x

    def dH(x):
        x = np.asarray(x, dtype=float)
        return a * x - b * np.tanh(c * x)

    def d2H(x):
        x = np.asarray(x, dtype=float)
        return a - b * c / np.cosh(c * x) ** 2

    def d3H(x):
        x = np.asarray(x, dtype=float)
        s2 = 1.0 / np.cosh(c * x) ** 2
        return 2.0 * b * c * c * s2 * np.tanh(c * x)

    def d4H(x):
        x = np.asarray(x, dtype=float)
        s2 = 1.0 / np.cosh(c * x) ** 2
        th = np.tanh(c * x)
        return 2.0 * b * c**3 * s2 * (s2 - 2.0 * th * th)

    return PotentialModel(
        H=H,
        dH=dH,
        d2H=d2H,
        d3H=d3H,
        d4H=d4H,
        alpha=a,
        g_bound=abs(b),
        h2_bound=max(abs(a), abs(a - b * c)),
        family="reference",
        params={"alpha": a, "beta": b, "gamma": c},
    )


_REGISTRY: Dict[str, Callable[..., PotentialModel]] = {"reference": reference_potential}


def register_potential(name: str, factory: Callable[..., PotentialModel]) -> None:
    """Make a potential family selectable by name in run configurations."""
    _REGISTRY[name] = factory


def make_potential(name: str, **params: float) -> PotentialModel:
    """Instantiate a registered family with keyword parameters."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise AssumptionError(f"unknown potential family '{name}'") from None
    return factory(**params)


def potential_names() -> List[str]:
    return sorted(_REGISTRY)


def _probe_grid(lo: float = PROBE_LO, hi: float = PROBE_HI, step: float = PROBE_STEP) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return np.linspace(lo, hi, n + 1)


def _sign_runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Index ranges [i, j) on which ``mask`` is True."""
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2], edges[1::2]))


def validate(model: PotentialModel, grid: Optional[np.ndarray] = None) -> List[str]:
    """List the violated structural assumptions, each with a witness point.

    Checks boundedness of ``g`` and ``H''``, a single negative-curvature
    interval straddling the origin, curvature plateaus outside it, and
    finite-difference consistency of the derivative chain.

    Raises:
        AssumptionError: If an evaluator returns a non-finite value.
    """
    x = _probe_grid() if grid is None else np.asarray(grid, dtype=float)
    values = {}
    for name in ("H", "dH", "d2H", "d3H", "d4H"):
        v = np.asarray(getattr(model, name)(x), dtype=float)
        bad = ~np.isfinite(v)
        if bad.any():
            raise AssumptionError(f"evaluation failure: {name} at x={x[bad][0]:.17g}")
        values[name] = v
    out: List[str] = []

    g = values["dH"] - model.alpha * x
    h2 = values["d2H"]
    if not model.alpha > 0:
        out.append(f"(A1): alpha must be positive, got {model.alpha}")
    for label, v, bound in (("g", g, model.g_bound), ("H''", h2, model.h2_bound)):
        av = np.abs(v)
        i = int(np.argmax(av))
        if bound is not None and av[i] > bound * (1 + 1e-12) + 1e-12:
            out.append(f"(A1): |{label}| exceeds its bound at x={x[i]:.6g}")
            continue
        # growth at the grid edge is taken as a witness of unboundedness
        if len(x) > 2 and i in (0, len(x) - 1):
            j = 1 if i == 0 else len(x) - 2
            if av[i] > av[j] * (1 + 1e-9):
                out.append(f"(A1): {label} unbounded (still growing at x={x[i]:.6g})")

    runs = _sign_runs(h2 < 0)
    if not runs:
        out.append("(A2): no spinodal interval (H'' never negative)")
    elif len(runs) > 1:
        out.append(f"(A2): {len(runs)} disjoint spinodal intervals, first near x={x[runs[1][0]]:.6g}")
    else:
        i, j = runs[0]
        if i == 0 or j == len(x):
            out.append("(A2): spinodal interval reaches the probe boundary")
        elif not (x[i - 1] < 0.0 < x[j]):
            out.append(f"(A2): spinodal interval does not contain 0 (starts near x={x[i]:.6g})")
        outside = np.ones_like(h2, dtype=bool)
        outside[max(i - 1, 0) : j + 1] = False
        flat = outside & (np.abs(h2) < 1e-14)
        for a0, a1 in _sign_runs(flat):
            if a1 - a0 >= 2:
                out.append(f"(A2): curvature plateau outside the spinodal at x={x[a0]:.6g}")
                break

    # derivative chain by centered differences on a coarse probe
    h = 1e-5
    xp = np.linspace(-5.0, 5.0, 41)
    chain = (("H", "dH"), ("dH", "d2H"), ("d2H", "d3H"))
    for f_name, d_name in chain:
        f = getattr(model, f_name)
        d = np.asarray(getattr(model, d_name)(xp), dtype=float)
        fd = (np.asarray(f(xp + h)) - np.asarray(f(xp - h))) / (2 * h)
        err = np.abs(fd - d) / np.maximum(1.0, np.abs(d))
        k = int(np.argmax(err))
        if err[k] > 1e-6:
            out.append(f"(smoothness): {d_name} inconsistent with {f_name} at x={xp[k]:.6g}")
    return out


@dataclass(frozen=True)
class SpinodalChart:
    """Spinodal points, matched outer states and the critical forces.

    ``x_star_minus < 0 < x_star_plus`` bound the negative-curvature interval;
    ``x_2star_plus`` is the right stable state with force ``sigma_star_plus``
    and ``x_2star_minus`` the left stable state with force ``sigma_star_minus``.
    """

    model: PotentialModel
    x_star_minus: float
    x_star_plus: float
    x_2star_minus: float
    x_2star_plus: float
    sigma_star_minus: float
    sigma_star_plus: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "x_star_minus": self.x_star_minus,
            "x_star_plus": self.x_star_plus,
            "x_2star_minus": self.x_2star_minus,
            "x_2star_plus": self.x_2star_plus,
            "sigma_star_minus": self.sigma_star_minus,
            "sigma_star_plus": self.sigma_star_plus,
        }


def _root(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    df: Optional[Callable[[float], float]] = None,
) -> float:
    """Bisection root in ``[lo, hi]``, optionally polished by Newton steps.

    A Newton step is kept only if it stays in the bracket and lowers the
    residual, so the polish can never make the bisection answer worse.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise BranchDomainError(f"no sign change on [{lo:.6g}, {hi:.6g}]")
    x = float(bisect(f, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=ROOT_MAXITER))
    if df is not None:
        fx = f(x)
        for _ in range(3):
            d = df(x)
            if fx == 0.0 or d == 0.0:
                break
            y = x - fx / d
            fy = f(y)
            if not (min(lo, hi) <= y <= max(lo, hi)) or abs(fy) > abs(fx):
                break
            x, fx = y, fy
    return x


def _scalar(fn: Evaluator) -> Callable[[float], float]:
    return lambda x: float(fn(np.float64(x)))


def _expand(f: Callable[[float], float], start: float, direction: float, target_sign: float) -> float:
    """Walk away from ``start`` until ``f`` takes the sign ``target_sign``."""
    step = 1.0
    x = start + direction * step
    for _ in range(200):
        if np.sign(f(x)) == target_sign or f(x) == 0.0:
            return x
        step *= 2.0
        x = start + direction * step
    raise BranchDomainError("bracket expansion failed")


def spinodal_chart(model: PotentialModel, grid: Optional[np.ndarray] = None) -> SpinodalChart:
    """Locate the spinodal points and the matched outer stable states.

    Raises:
        AssumptionError: If no sign change of ``H''`` brackets a spinodal.
    """
    x = _probe_grid() if grid is None else np.asarray(grid, dtype=float)
    h2 = np.asarray(model.d2H(x), dtype=float)
    runs = _sign_runs(h2 < 0)
    if not runs or runs[0][0] == 0 or runs[-1][1] == len(x):
        raise AssumptionError("no spinodal points found")
    i, j = runs[0][0], runs[-1][1]
    d2 = _scalar(model.d2H)
    d3 = _scalar(model.d3H)
    dH = _scalar(model.dH)
    x_lo = _root(d2, x[i - 1], x[i], d3)
    x_hi = _root(d2, x[j - 1], x[j], d3)
    s_up = dH(x_lo)
    s_dn = dH(x_hi)

    right = _expand(lambda y: dH(y) - s_up, x_hi, +1.0, +1.0)
    x2p = _root(lambda y: dH(y) - s_up, x_hi, right, d2)
    left = _expand(lambda y: dH(y) - s_dn, x_lo, -1.0, -1.0)
    x2m = _root(lambda y: dH(y) - s_dn, left, x_lo, d2)
    return SpinodalChart(model, x_lo, x_hi, x2m, x2p, s_dn, s_up)


def branch_solve(chart: SpinodalChart, sigma: float, branch: Branch) -> float:
    """Invert ``H'`` on one monotone branch.

    Args:
        chart: Spinodal chart carrying the potential.
        sigma: Target force.
        branch: ``"minus"`` (left stable, ``sigma <= sigma^s``), ``"zero"``
            (spinodal, ``sigma_s <= sigma <= sigma^s``) or ``"plus"`` (right
            stable, ``sigma >= sigma_s``).

    Raises:
        BranchDomainError: If ``sigma`` lies outside the branch domain.
    """
    sigma = float(sigma)
    dH = _scalar(chart.model.dH)
    d2 = _scalar(chart.model.d2H)
    f = lambda y: dH(y) - sigma  # noqa: E731
    lo_s, hi_s = chart.sigma_star_minus, chart.sigma_star_plus
    if branch == "zero":
        if not lo_s <= sigma <= hi_s:
            raise BranchDomainError(f"branch domain violation: sigma={sigma} outside [{lo_s}, {hi_s}] (zero)")
        if sigma == hi_s:
            return chart.x_star_minus
        if sigma == lo_s:
            return chart.x_star_plus
        return _root(f, chart.x_star_minus, chart.x_star_plus, d2)
    if branch == "plus":
        if not sigma >= lo_s:
            raise BranchDomainError(f"branch domain violation: sigma={sigma} below {lo_s} (plus)")
        if sigma == lo_s:
            return chart.x_star_plus
        hi = _expand(f, chart.x_star_plus, +1.0, +1.0)
        return _root(f, chart.x_star_plus, hi, d2)
    if branch == "minus":
        if not sigma <= hi_s:
            raise BranchDomainError(f"branch domain violation: sigma={sigma} above {hi_s} (minus)")
        if sigma == hi_s:
            return chart.x_star_minus
        lo = _expand(f, chart.x_star_minus, -1.0, -1.0)
        return _root(f, lo, chart.x_star_minus, d2)
    raise ValueError(f"unknown branch '{branch}'")


@dataclass(frozen=True)
class WellPreparedData:
    """Launch configuration: a Gaussian peak of mass ``m`` on the spinodal at
    ``x0`` and an atom of mass ``1 - m`` at the right stable state ``x_plus``,
    all at the common force ``sigma0``."""

    m: float
    x0: float
    x_plus: float
    x_minus: float
    sigma0: float
    a: float
    b: float
    b_minus: float
    ell_star: float

    @property
    def stability(self) -> float:
        """``(1-m)a + mb``; positive for admissible data."""
        return (1.0 - self.m) * self.a + self.m * self.b

    def as_dict(self) -> Dict[str, float]:
        return {
            "m": self.m,
            "x0": self.x0,
            "x_plus": self.x_plus,
            "x_minus": self.x_minus,
            "sigma0": self.sigma0,
            "a": self.a,
            "b": self.b,
            "b_minus": self.b_minus,
            "ell_star": self.ell_star,
            "stability": self.stability,
        }


def _prepare_at(model: PotentialModel, chart: SpinodalChart, m: float, sigma0: float) -> WellPreparedData:
    x0 = branch_solve(chart, sigma0, "zero")
    xp = branch_solve(chart, sigma0, "plus")
    xm = branch_solve(chart, sigma0, "minus")
    a = float(model.d2H(np.float64(x0)))
    b = float(model.d2H(np.float64(xp)))
    bm = float(model.d2H(np.float64(xm)))
    ell = m * x0 + (1.0 - m) * xp
    return WellPreparedData(m, x0, xp, xm, sigma0, a, b, bm, ell)


def prepare(
    model: PotentialModel,
    chart: SpinodalChart,
    m: float,
    sigma0: Optional[float] = None,
    ell_star: Optional[float] = None,
) -> WellPreparedData:
    """Build launch data from the mass fraction and one anchor.

    Exactly one of ``sigma0`` and ``ell_star`` must be given.  With ``ell_star``
    the force is found by scanning ``(sigma_s, sigma^s)`` for sign changes of
    ``m X0(s) + (1-m) X+(s) - ell_star`` and refining by bisection; the first
    root that satisfies the stability inequality is used.

    Raises:
        StabilityError: If ``(1-m)a + mb <= 0``.
        BranchDomainError: If ``sigma0`` is not strictly inside the spinodal
            force range or no force matches ``ell_star``.
    """
    if not 0.0 < m <= 1.0:
        raise ValueError("m must be in (0,1]")
    if (sigma0 is None) == (ell_star is None):
        raise ValueError("give exactly one of sigma0 and ell_star")
    lo, hi = chart.sigma_star_minus, chart.sigma_star_plus
    if sigma0 is not None:
        if not lo < sigma0 < hi:
            raise BranchDomainError(f"branch domain violation: sigma0={sigma0} outside ({lo}, {hi})")
        data = _prepare_at(model, chart, m, float(sigma0))
    else:
        ell = float(ell_star)

        def resid(s: float) -> float:
            return m * branch_solve(chart, s, "zero") + (1 - m) * branch_solve(chart, s, "plus") - ell

        s_grid = np.linspace(lo, hi, 2001)[1:-1]
        r = np.array([resid(s) for s in s_grid])
        roots = [s_grid[k] for k in np.flatnonzero(r == 0.0)]
        for k in np.flatnonzero(r[:-1] * r[1:] < 0):
            roots.append(_root(resid, s_grid[k], s_grid[k + 1]))
        if not roots:
            raise BranchDomainError(f"no sigma0 matches ell_star={ell}")
        candidates = [_prepare_at(model, chart, m, s) for s in sorted(roots)]
        stable = [c for c in candidates if c.stability > 0]
        data = stable[0] if stable else candidates[0]
        data = WellPreparedData(**{**data.__dict__, "ell_star": ell})
    if not data.stability > 0:
        raise StabilityError(f"stability violated: (1-m)a+mb = {data.stability:.6g} <= 0")
    return data


@dataclass(frozen=True)
class BranchExpansion:
    """Square-root expansions of the branches near ``sigma^s``.

    With ``D = sigma^s - sigma`` and ``A = X - x_s``:
    ``A0 = a1_zero*sqrt(D) + a2*D + ...``, ``A- = a1_minus*sqrt(D) + a2*D + ...``
    and ``X+ = x^ss - b_lin*D + ...``.  ``taylor_c1``, ``taylor_c2`` are the
    coefficients of ``D = taylor_c1*A**2 + taylor_c2*A**3 + ...``, i.e.
    ``-H'''(x_s)/2`` and ``-H''''(x_s)/6``.
    """

    c: float
    a1_zero: float
    a1_minus: float
    a2: float
    b_lin: float
    taylor_c1: float
    taylor_c2: float
    x_star: float
    x_2star_plus: float
    sigma_star: float

    def predict(self, sigma: float, branch: Branch) -> float:
        """Two-term prediction of a branch value for ``sigma`` just below ``sigma^s``."""
        d = self.sigma_star - float(sigma)
        if d < 0:
            raise BranchDomainError("expansion valid only for sigma <= sigma^s")
        if branch == "zero":
            return self.x_star + self.a1_zero * math.sqrt(d) + self.a2 * d
        if branch == "minus":
            return self.x_star + self.a1_minus * math.sqrt(d) + self.a2 * d
        if branch == "plus":
            return self.x_2star_plus - self.b_lin * d
        raise ValueError(f"unknown branch '{branch}'")

    def as_dict(self) -> Dict[str, float]:
        return {
            "c": self.c,
            "a1_zero": self.a1_zero,
            "a1_minus": self.a1_minus,
            "a2": self.a2,
            "b_lin": self.b_lin,
            "taylor_c1": self.taylor_c1,
            "taylor_c2": self.taylor_c2,
        }


def branch_expansion(model: PotentialModel, chart: SpinodalChart) -> BranchExpansion:
    """Coefficients of the near-``sigma^s`` branch expansions.

    Raises:
        AssumptionError: If ``|H'''(x_s)| < 1e-8`` (degenerate spinodal).
    """
    xs = chart.x_star_minus
    h3 = float(model.d3H(np.float64(xs)))
    h4 = float(model.d4H(np.float64(xs)))
    if abs(h3) < DEGENERATE_H3:
        raise AssumptionError("degenerate spinodal: H'''(x_s)=0")
    c1 = -h3 / 2.0
    c2 = -h4 / 6.0
    a1 = math.sqrt(1.0 / abs(c1))
    a2 = -c2 / (2.0 * c1 * c1)
    b_lin = 1.0 / float(model.d2H(np.float64(chart.x_2star_plus)))
    return BranchExpansion(
        c=math.sqrt(2.0 / abs(h3)),
        a1_zero=a1,
        a1_minus=-a1,
        a2=a2,
        b_lin=b_lin,
        taylor_c1=c1,
        taylor_c2=c2,
        x_star=xs,
        x_2star_plus=chart.x_2star_plus,
        sigma_star=chart.sigma_star_plus,
    )
