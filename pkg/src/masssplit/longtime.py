"""Long-time behaviour: equilibrium detection, limit states and diagnostics.

Everything here is post-processing of a recorded series, so it works the same
on an in-memory run and on a ``series.csv`` read back from disk.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import simpson, trapezoid

from .errors import BranchDomainError, ConvergenceError
from .potential import PotentialModel, SpinodalChart, branch_expansion, branch_solve
from .transport import CSV_COLUMNS, TimeSeries

DEFAULT_TOL_D = 1e-8
DEFAULT_WINDOW = 5.0
RIDGE_FLOOR = 1e-14
AGREEMENT_TOL = 1e-6


@dataclass
class SeriesTable:
    """Column view of snapshot data, independent of where it came from."""

    columns: Dict[str, np.ndarray]

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __len__(self) -> int:
        return int(self.columns["t"].size)

    @classmethod
    def from_series(cls, series: TimeSeries) -> "SeriesTable":
        return cls({name: series.column(name) for name in CSV_COLUMNS})

    @classmethod
    def from_csv(cls, path: str) -> "SeriesTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty series")
        names = list(rows[0].keys())
        return cls({n: np.array([float(r[n]) for r in rows]) for n in names})

    def tail(self, start: int) -> "SeriesTable":
        return SeriesTable({k: v[start:] for k, v in self.columns.items()})


def _table(series) -> SeriesTable:
    return series if isinstance(series, SeriesTable) else SeriesTable.from_series(series)


@dataclass(frozen=True)
class EquilibriumStop:
    """Detected stop time, or ``converged=False`` with the reason."""

    converged: bool
    t_stop: float
    index: int
    integral_D: float
    message: str = ""


def detect_equilibrium(series, tol_D: float = DEFAULT_TOL_D, window: float = DEFAULT_WINDOW) -> EquilibriumStop:
    """Earliest snapshot after which ``D <= tol_D`` and ``sigma`` stays within ``tol_D``.

    A stop must be followed by at least ``window`` time units of data, all
    meeting both conditions.  ``integral_D`` is the Simpson integral of the
    dissipation over the whole series.
    """
    tab = _table(series)
    if len(tab) == 0:
        raise ValueError("empty series")
    t, D, sig = tab.column("t"), tab.column("dissipation"), tab.column("sigma")
    integral = float(simpson(D, x=t)) if t.size > 2 else float(trapezoid(D, t))
    ok_tail = np.flip(np.logical_and.accumulate(np.flip(D <= tol_D)))
    for i in np.flatnonzero(ok_tail):
        if t[-1] - t[i] < window and t.size > 1:
            break
        w = (t >= t[i]) & (t <= t[i] + window)
        if np.max(np.abs(sig[w] - sig[i])) <= tol_D:
            return EquilibriumStop(True, float(t[i]), int(i), integral)
    return EquilibriumStop(False, float("nan"), -1, integral, "not converged: extend t_end")


@dataclass(frozen=True)
class LimitTriple:
    """Branch states at ``sigma_inf`` with their masses.

    Missing branches (single stable point) are NaN with zero mass.
    ``constraint_residual`` is ``|sum m_i x_i - ell_star|``.
    """

    sigma_inf: float
    x_minus: float
    x_zero: float
    x_plus: float
    m_minus: float
    m_zero: float
    m_plus: float
    constraint_residual: float
    slope_residual: float


def limit_triple(
    model: PotentialModel,
    chart: SpinodalChart,
    sigma_inf: float,
    masses: Tuple[float, float, float],
    ell_star: float,
) -> LimitTriple:
    """Invert ``H'`` at ``sigma_inf`` on every branch whose domain contains it.

    Raises:
        BranchDomainError: If no branch admits ``sigma_inf`` ("no admissible
            limit").
    """
    xs = []
    for branch in ("minus", "zero", "plus"):
        try:
            xs.append(branch_solve(chart, sigma_inf, branch))
        except BranchDomainError:
            xs.append(float("nan"))
    if all(math.isnan(x) for x in xs):
        raise BranchDomainError(f"no admissible limit for sigma_inf={sigma_inf}")
    m = list(masses)
    # mass in a missing phase has nowhere to sit; move it to the nearest present one
    if math.isnan(xs[1]):
        side = 2 if not math.isnan(xs[2]) else 0
        m[side] += m[1]
        m[1] = 0.0
    moment = sum(mi * xi for mi, xi in zip(m, xs) if not math.isnan(xi))
    slope = max(abs(float(model.dH(np.float64(x))) - sigma_inf) for x in xs if not math.isnan(x))
    return LimitTriple(sigma_inf, xs[0], xs[1], xs[2], m[0], m[1], m[2], abs(moment - ell_star), slope)


@dataclass(frozen=True)
class DecayFit:
    """Fitted exponential decay of the spinodal ridge density."""

    verdict: str
    rate: float
    predicted: float
    t_from: float
    t_to: float
    points: int
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict in ("PASS", "decayed below floor")


def confinement_band(model: PotentialModel, chart: SpinodalChart, eta: float) -> Tuple[float, float, float]:
    """Spinodal interval for forces in ``[sigma_s + eta, sigma^s - eta]`` and its min ``|H''|``."""
    lo_s, hi_s = chart.sigma_star_minus + eta, chart.sigma_star_plus - eta
    if not lo_s < hi_s:
        raise ValueError("eta leaves no confinement band")
    x1 = branch_solve(chart, lo_s, "zero")
    x2 = branch_solve(chart, hi_s, "zero")
    lo, hi = min(x1, x2), max(x1, x2)
    xs = np.linspace(lo, hi, 2001)
    return lo, hi, float(np.min(np.abs(model.d2H(xs))))


def spinodal_decay(
    series,
    chart: SpinodalChart,
    model: PotentialModel,
    eta: float,
    floor: float = RIDGE_FLOOR,
    slack: float = 0.1,
) -> DecayFit:
    """Fit ``log r(t)`` of the ridge density on the trailing confined stretch.

    The fit starts at the largest ridge value inside the stretch and uses
    points above ``floor``.  PASS when the rate is at least ``(1 - slack)``
    times the smallest ``|H''|`` over the confinement band.
    """
    tab = _table(series)
    t, sig, r = tab.column("t"), tab.column("sigma"), tab.column("ridge_density")
    _, _, predicted = confinement_band(model, chart, eta)
    inside = (sig > chart.sigma_star_minus + eta) & (sig < chart.sigma_star_plus - eta)
    if not inside[-1]:
        return DecayFit("hypothesis violated: sigma not confined", float("nan"), predicted, float("nan"), float("nan"), 0)
    start = int(np.flatnonzero(~inside)[-1] + 1) if np.any(~inside) else 0
    rr = r[start:]
    tt = t[start:]
    valid = np.isfinite(rr) & (rr > floor)
    if np.count_nonzero(valid) < 3:
        return DecayFit("decayed below floor", float("inf"), predicted, float(tt[0]), float(tt[-1]), 0)
    peak = int(np.argmax(np.where(valid, rr, -np.inf)))
    sel = valid.copy()
    sel[:peak] = False
    if np.count_nonzero(sel) < 3:
        return DecayFit("FAIL", float("nan"), predicted, float(tt[peak]), float(tt[-1]), int(np.count_nonzero(sel)), "too few points after the peak")
    slope, _ = np.polyfit(tt[sel], np.log(rr[sel]), 1)
    rate = float(-slope)
    verdict = "PASS" if rate >= (1.0 - slack) * predicted else "FAIL"
    ts = tt[sel]
    return DecayFit(verdict, rate, predicted, float(ts[0]), float(ts[-1]), int(ts.size))


@dataclass(frozen=True)
class UniquenessVerdict:
    """Subsequence agreement and scenario classification."""

    agree: bool
    case: str
    hypotheses: List[str]
    limits_even: Dict[str, float]
    limits_odd: Dict[str, float]
    max_difference: float
    sign_quantity: float = float("nan")
    expansion: Dict[str, float] = field(default_factory=dict)
    message: str = ""


_LIMIT_KEYS = ("sigma", "m_minus", "m_zero", "m_plus")


def classify_case(sigma_inf: float, sigma_tail: np.ndarray, chart: SpinodalChart, eta: float) -> str:
    hi, lo = chart.sigma_star_plus, chart.sigma_star_minus
    if sigma_inf >= hi + eta or sigma_inf <= lo - eta:
        return "case 1"
    near = abs(sigma_inf - hi) < eta or abs(sigma_inf - lo) < eta
    if near:
        crit = hi if abs(sigma_inf - hi) < eta else lo
        crosses = np.any(sigma_tail > crit) and np.any(sigma_tail < crit)
        return "case 3" if crosses else "case 4"
    return "case 2"


def hypothesis_status(model: PotentialModel, chart: SpinodalChart, ell_star: float) -> List[str]:
    """Unmet hypotheses of the uniqueness result (empty when all hold)."""
    out = []
    if not ell_star > chart.x_star_plus:
        out.append("hypothesis ell* > x^* not met")
    if not float(model.d4H(np.float64(chart.x_star_minus))) > 0:
        out.append("hypothesis H''''>0 not met")
    return out


def uniqueness_probe(
    series,
    stop: EquilibriumStop,
    model: PotentialModel,
    chart: SpinodalChart,
    ell_star: float,
    eta: float,
    tol: float = AGREEMENT_TOL,
) -> UniquenessVerdict:
    """Compare limits along even and odd snapshots past the stop and classify.

    Raises:
        ConvergenceError: If the run has no detected stop.
    """
    if not stop.converged:
        raise ConvergenceError("not converged: extend t_end")
    tab = _table(series).tail(stop.index)
    even = {k: float(tab.column(k)[0::2][-1]) for k in _LIMIT_KEYS}
    odd = {k: float(tab.column(k)[1::2][-1]) if len(tab) > 1 else even[k] for k in _LIMIT_KEYS}
    diff = max(abs(even[k] - odd[k]) for k in _LIMIT_KEYS)
    agree = diff <= tol
    sig_inf = float(tab.column("sigma")[-1])
    case = classify_case(sig_inf, tab.column("sigma"), chart, eta)
    sign_q = float("nan")
    expansion: Dict[str, float] = {}
    if case in ("case 3", "case 4"):
        exp = branch_expansion(model, chart)
        m_plus = float(tab.column("m_plus")[-1])
        sign_q = -2.0 * (exp.a2 * (1.0 - m_plus) - m_plus * exp.b_lin)
        expansion = exp.as_dict()
    msg = "" if agree else f"non-unique limit detected: {even} vs {odd}"
    return UniquenessVerdict(agree, case, hypothesis_status(model, chart, ell_star), even, odd, diff, sign_q, expansion, msg)


@dataclass(frozen=True)
class EquilibriumReport:
    """Limit configuration and diagnostics of one run.

    ``m_*`` are masses of the transported distribution; ``node_m_*`` those of
    the quadrature nodes, which carry the simulated measure and therefore
    the conserved moment.  ``constraint_residual`` uses the node masses and
    ``continuum_constraint_residual`` the distribution masses.
    """

    converged: bool
    t_stop: float
    sigma_inf: float
    x_minus: float
    x_zero: float
    x_plus: float
    m_minus: float
    m_zero: float
    m_plus: float
    node_m_minus: float
    node_m_zero: float
    node_m_plus: float
    m_transfer: float
    constraint_residual: float
    continuum_constraint_residual: float
    slope_residual: float
    dissipation_at_stop: float
    integral_D: float
    energy_drop: float
    energy_budget_error: float
    decay_rate: float
    decay_predicted: float
    decay_verdict: str
    case: str
    hypotheses: List[str]
    subsequences_agree: bool
    subsequence_difference: float
    sign_quantity: float
    boundary_caveat: bool
    flags: Dict[str, bool]

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)


def default_eta(chart: SpinodalChart) -> float:
    """A tenth of the hysteresis width ``sigma^s - sigma_s``."""
    return 0.1 * (chart.sigma_star_plus - chart.sigma_star_minus)


def build_report(
    series,
    model: PotentialModel,
    chart: SpinodalChart,
    m: float,
    ell_star: float,
    tol_D: float = DEFAULT_TOL_D,
    window: float = DEFAULT_WINDOW,
    eta: Optional[float] = None,
    constraint_tol: float = 1e-4,
) -> EquilibriumReport:
    """Assemble the equilibrium report from a recorded series.

    Raises:
        ConvergenceError: If no equilibrium is detected ("not converged:
            extend t_end").
    """
    tab = _table(series)
    eta = default_eta(chart) if eta is None else eta
    stop = detect_equilibrium(tab, tol_D, window)
    if not stop.converged:
        raise ConvergenceError(stop.message)
    last = -1
    sig_inf = float(tab.column("sigma")[last])
    cont = tuple(float(tab.column(k)[last]) for k in ("m_minus", "m_zero", "m_plus"))
    nodes = tuple(float(tab.column(k)[last]) for k in ("node_m_minus", "node_m_zero", "node_m_plus"))
    trip = limit_triple(model, chart, sig_inf, nodes, ell_star)
    trip_c = limit_triple(model, chart, sig_inf, cont, ell_star)
    E = tab.column("energy")
    drop = float(E[0] - E[-1])
    budget = abs(stop.integral_D - drop) / max(abs(drop), 1e-300)
    decay = spinodal_decay(tab, chart, model, eta)
    uniq = uniqueness_probe(tab, stop, model, chart, ell_star, eta)
    x_star = (chart.x_star_minus, chart.x_star_plus)
    caveat = any(abs(x - xs) < 1e-8 for x in (trip.x_minus, trip.x_zero, trip.x_plus) for xs in x_star if not math.isnan(x))
    flags = {
        "equilibrium": stop.converged,
        "constraint": trip.constraint_residual <= constraint_tol,
        "slopes": trip.slope_residual <= 1e-8,
        "energy_budget": budget <= 1e-3,
        "decay": decay.passed,
        "uniqueness": uniq.agree,
    }
    return EquilibriumReport(
        converged=stop.converged,
        t_stop=stop.t_stop,
        sigma_inf=sig_inf,
        x_minus=trip.x_minus,
        x_zero=trip.x_zero,
        x_plus=trip.x_plus,
        m_minus=cont[0],
        m_zero=cont[1],
        m_plus=cont[2],
        node_m_minus=nodes[0],
        node_m_zero=nodes[1],
        node_m_plus=nodes[2],
        m_transfer=cont[2] - (1.0 - m),
        constraint_residual=trip.constraint_residual,
        continuum_constraint_residual=trip_c.constraint_residual,
        slope_residual=trip.slope_residual,
        dissipation_at_stop=float(tab.column("dissipation")[stop.index]),
        integral_D=stop.integral_D,
        energy_drop=drop,
        energy_budget_error=budget,
        decay_rate=decay.rate,
        decay_predicted=decay.predicted,
        decay_verdict=decay.verdict,
        case=uniq.case,
        hypotheses=uniq.hypotheses,
        subsequences_agree=uniq.agree,
        subsequence_difference=uniq.max_difference,
        sign_quantity=uniq.sign_quantity,
        boundary_caveat=caveat,
        flags=flags,
    )


def summary_lines(report: EquilibriumReport) -> List[str]:
    """Human-readable summary of a report."""
    r = report
    lines = [
        f"equilibrium at t = {r.t_stop:.6g}: sigma_inf = {r.sigma_inf:.12g}",
        f"states  x- = {r.x_minus:.12g}  x0 = {r.x_zero:.12g}  x+ = {r.x_plus:.12g}",
    ]
    if r.boundary_caveat:
        lines.append(f"masses  m+ = {r.m_plus:.9g}  m- + m0 = {r.m_minus + r.m_zero:.9g}  (limit at a spinodal point)")
    else:
        lines.append(f"masses  m- = {r.m_minus:.9g}  m0 = {r.m_zero:.9g}  m+ = {r.m_plus:.9g}")
    lines += [
        f"node masses  m- = {r.node_m_minus:.9g}  m0 = {r.node_m_zero:.9g}  m+ = {r.node_m_plus:.9g}",
        f"transferred mass = {r.m_transfer:.9g}",
        f"constraint residual = {r.constraint_residual:.3g} (distribution masses: {r.continuum_constraint_residual:.3g})",
        f"energy budget error = {r.energy_budget_error:.3g}",
        f"ridge decay: {r.decay_verdict} (rate {r.decay_rate:.4g}, bound {r.decay_predicted:.4g})",
        f"classification: {r.case}; subsequences {'agree' if r.subsequences_agree else 'DISAGREE'}",
    ]
    lines += [f"note: {h}" for h in r.hypotheses]
    return lines
