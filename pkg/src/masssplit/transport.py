"""Characteristic transport with the self-consistent constraint force.

The distribution is carried by Gauss-Hermite nodes ``X(t, K)`` (node mass
``m w_K``), two extremal characteristics ``X_-``, ``X_+`` and an atom of mass
``1 - m`` riding on ``X_+``.  Every characteristic obeys
``dX/dt = -(H'(X) - sigma(t))`` where ``sigma`` is the mean of ``H'`` under
the current measure, which keeps the first moment fixed.

Gaps between neighbouring characteristics are integrated in logarithmic form
next to the positions, so ordering is certified even after neighbours merge
below floating-point resolution inside a well.

Continuum quantities (masses in each phase, density on the spinodal) are
obtained by tracing points backward along the recorded force history to the
launch time and reading off their Gaussian label ``K``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.interpolate import CubicHermiteSpline
from scipy.special import erfc

from .errors import OrderingError
from .potential import PotentialModel, SpinodalChart, branch_solve

_SQRT_PI = math.sqrt(math.pi)
_EPS = np.finfo(float).eps


def gauss_hermite(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and normalized weights for averages against ``exp(-K^2)/sqrt(pi)``.

    Nodes are made exactly antisymmetric and weights exactly symmetric, and
    the weights sum to one.
    """
    K, w = hermgauss(n)
    K = 0.5 * (K - K[::-1])
    w = 0.5 * (w + w[::-1])
    w = w / w.sum()
    return K, w


def symmetric_sum(w: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``sum_i w_i values_i`` over axis 0, pairing node ``i`` with its mirror.

    Pairing makes the sum of an odd function of symmetric nodes exactly zero.
    """
    v = np.asarray(values, dtype=float)
    n = w.size
    h = n // 2
    pair = v[:h] + v[n - 1 : n - 1 - h : -1] if h else np.zeros((0,) + v.shape[1:])
    ww = w[:h].reshape((h,) + (1,) * (v.ndim - 1))
    total = np.sum(ww * pair, axis=0)
    if n % 2:
        total = total + w[h] * v[h]
    return total


@dataclass(frozen=True)
class CharacteristicEnsemble:
    """Positions of all characteristics at time ``t``.

    Attributes:
        K: Gaussian labels of the interior nodes.
        weights: Normalized quadrature weights, summing to one.
        X: Interior positions, increasing in ``K``.
        x_minus: Left extremal characteristic.
        x_plus: Right extremal characteristic, carrying the atom.
        m: Mass of the interior population.
        t: Time.
        jacobian: ``dX/dK`` when known (at the launch).
        log_gaps: Logs of the ``n+1`` gaps of ``[x_minus, X..., x_plus]``.
    """

    K: np.ndarray
    weights: np.ndarray
    X: np.ndarray
    x_minus: float
    x_plus: float
    m: float
    t: float
    jacobian: Optional[np.ndarray] = None
    log_gaps: Optional[np.ndarray] = None

    @property
    def positions(self) -> np.ndarray:
        """``[x_minus, X..., x_plus]``."""
        return np.concatenate(([self.x_minus], self.X, [self.x_plus]))

    @property
    def R_values(self) -> np.ndarray:
        """Frozen distribution values ``m Q(K)`` carried by the nodes."""
        return self.m * 0.5 * erfc(-self.K)

    @property
    def node_masses(self) -> np.ndarray:
        return self.m * self.weights

    def total_mass(self) -> float:
        return float(self.m * np.sum(self.weights) + (1.0 - self.m))

    def gaps(self) -> np.ndarray:
        if self.log_gaps is not None:
            return np.exp(self.log_gaps)
        return np.diff(self.positions)


def _mean(model_vals: np.ndarray, atom_val, m: float, w: np.ndarray):
    return m * symmetric_sum(w, model_vals) + (1.0 - m) * atom_val


def sigma_of(ensemble: CharacteristicEnsemble, model: PotentialModel) -> float:
    """Mean force ``m <H'(X)> + (1-m) H'(X_+)``."""
    e = ensemble
    return float(_mean(model.dH(e.X), model.dH(np.float64(e.x_plus)), e.m, e.weights))


def _check_order(pos: np.ndarray, log_gaps: Optional[np.ndarray], dt: float = 1.0) -> None:
    # An update h*v smaller than half an ulp of x is lost, so near a stable
    # point neighbours stall within about eps*|x|/dt of each other in either
    # order; the tracked log-gap still certifies their true ordering.
    d = np.diff(pos)
    scale = 8 * _EPS * np.maximum(np.abs(pos[:-1]), np.abs(pos[1:])) / min(1.0, dt)
    if log_gaps is None:
        bad = d <= 0
    else:
        if not np.all(np.isfinite(log_gaps)):
            raise OrderingError("characteristic crossing (reduce dt): non-finite gap")
        # merged neighbours are fine only if the tracked gap is below resolution
        bad = (d < -scale) | ((d <= 0) & (np.exp(log_gaps) > scale))
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise OrderingError(f"characteristic crossing (reduce dt) between slots {j} and {j + 1}")


def sigma_by_parts(
    ensemble: CharacteristicEnsemble, model: PotentialModel, side: Literal["plus", "minus"] = "plus"
) -> float:
    """Force from integration by parts against the distribution function.

    ``side="plus"``: ``H'(X_+) - int H'' R dx``; ``side="minus"``:
    ``H'(X_-) + int H'' (1-R) dx``.  ``R`` is the distribution of the
    simulated measure, constant between neighbouring characteristics, so each
    segment integrates exactly to a difference of ``H'``.

    Raises:
        OrderingError: If a segment has negative length.
    """
    e = ensemble
    pos = e.positions
    _check_order(pos, e.log_gaps)
    hp = model.dH(pos)
    dh = np.diff(hp)
    R = np.concatenate(([0.0], e.m * np.cumsum(e.weights)))
    if side == "plus":
        return float(hp[-1] - np.sum(R * dh))
    return float(hp[0] + np.sum((1.0 - R) * dh))


def _slopes(model: PotentialModel, pos: np.ndarray, hp: np.ndarray) -> np.ndarray:
    """Divided differences of ``H'`` over each gap; ``H''`` at the midpoint for tiny gaps."""
    d = np.diff(pos)
    tiny = np.abs(d) <= 1e-6 * (1.0 + np.abs(pos[:-1]))
    safe = np.where(tiny, 1.0, d)
    dd = np.diff(hp) / safe
    if np.any(tiny):
        mid = 0.5 * (pos[:-1] + pos[1:])
        dd = np.where(tiny, model.d2H(mid), dd)
    return dd


def _rhs(model: PotentialModel, pos: np.ndarray, m: float, w: np.ndarray):
    hp = model.dH(pos)
    sig = m * symmetric_sum(w, hp[1:-1]) + (1.0 - m) * hp[-1]
    return -(hp - sig), -_slopes(model, pos, hp), float(sig)


def _rk4(model: PotentialModel, pos: np.ndarray, lg: np.ndarray, m: float, w: np.ndarray, h: float):
    k1, l1, s1 = _rhs(model, pos, m, w)
    k2, l2, s2 = _rhs(model, pos + 0.5 * h * k1, m, w)
    k3, l3, s3 = _rhs(model, pos + 0.5 * h * k2, m, w)
    k4, l4, s4 = _rhs(model, pos + h * k3, m, w)
    new_pos = pos + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    new_lg = lg + (h / 6.0) * (l1 + 2 * l2 + 2 * l3 + l4)
    return new_pos, new_lg, (s1, s2, s3, s4)


def _initial_log_gaps(pos: np.ndarray) -> np.ndarray:
    d = np.diff(pos)
    if np.any(d <= 0):
        raise OrderingError("characteristic ordering broken at seed")
    return np.log(d)


def step(ensemble: CharacteristicEnsemble, model: PotentialModel, dt: float) -> CharacteristicEnsemble:
    """One classical Runge-Kutta step with the force recomputed at every stage.

    Raises:
        OrderingError: If neighbours cross ("characteristic crossing (reduce dt)").
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    e = ensemble
    pos = e.positions
    lg = e.log_gaps if e.log_gaps is not None else _initial_log_gaps(pos)
    new_pos, new_lg, _ = _rk4(model, pos, lg, e.m, e.weights, dt)
    _check_order(new_pos, new_lg, dt)
    return replace(
        e, X=new_pos[1:-1], x_minus=float(new_pos[0]), x_plus=float(new_pos[-1]), t=e.t + dt, log_gaps=new_lg
    )


@dataclass(frozen=True)
class StateSnapshot:
    """Functionals of the state at one time.

    ``m_minus``, ``m_zero``, ``m_plus`` split the transported distribution at
    the spinodal points; ``node_m_*`` split the quadrature nodes instead (the
    atom is counted with the phase it sits in, boundary hits with the
    spinodal).  ``ridge_pos``/``ridge_density`` locate the largest density
    sampled inside the spinodal; NaN when absent.
    """

    t: float
    sigma: float
    ell: float
    energy: float
    dissipation: float
    m_minus: float
    m_zero: float
    m_plus: float
    x_minus_char: float
    x_plus_char: float
    ridge_pos: float
    ridge_density: float
    node_m_minus: float
    node_m_zero: float
    node_m_plus: float
    rho_at_star_minus: float = float("nan")
    rho_at_star_plus: float = float("nan")
    boundary_hits: int = 0


CSV_COLUMNS = (
    "t",
    "sigma",
    "ell",
    "energy",
    "dissipation",
    "m_minus",
    "m_zero",
    "m_plus",
    "x_minus_char",
    "x_plus_char",
    "ridge_pos",
    "ridge_density",
    "node_m_minus",
    "node_m_zero",
    "node_m_plus",
)


def _node_bins(e: CharacteristicEnsemble, chart: SpinodalChart) -> Tuple[float, float, float, int]:
    lo, hi = chart.x_star_minus, chart.x_star_plus
    mass = np.concatenate((e.m * e.weights, [1.0 - e.m]))
    pos = np.concatenate((e.X, [e.x_plus]))
    left = pos < lo
    right = pos > hi
    hits = int(np.count_nonzero((pos == lo) | (pos == hi)))
    m_minus = float(np.sum(mass[left]))
    m_plus = float(np.sum(mass[right]))
    return m_minus, float(1.0 - m_minus - m_plus), m_plus, hits


def node_density(ensemble: CharacteristicEnsemble) -> np.ndarray:
    """``m Q'(K) / (dX/dK)`` with centered differences in ``K`` (one-sided at the ends).

    NaN everywhere for a single node, which has no neighbour to difference.
    """
    e = ensemble
    n = e.K.size
    if n < 2:
        return np.full(n, np.nan)
    g = e.gaps()[1:-1]
    dXdK = np.empty(n)
    dK = np.diff(e.K)
    dXdK[1:-1] = (g[:-1] + g[1:]) / (dK[:-1] + dK[1:])
    dXdK[0] = g[0] / dK[0]
    dXdK[-1] = g[-1] / dK[-1]
    return e.m * np.exp(-e.K**2) / _SQRT_PI / dXdK


def functionals(ensemble: CharacteristicEnsemble, model: PotentialModel, chart: SpinodalChart) -> StateSnapshot:
    """Force, moment, energy, dissipation, phase masses and ridge of one state.

    Masses and ridge come from the quadrature nodes here; :func:`run` replaces
    them with values of the transported distribution.
    """
    e = ensemble
    hp = model.dH(e.X)
    hp_plus = float(model.dH(np.float64(e.x_plus)))
    sig = float(_mean(hp, hp_plus, e.m, e.weights))
    ell = float(_mean(e.X, e.x_plus, e.m, e.weights))
    energy = float(_mean(model.H(e.X), float(model.H(np.float64(e.x_plus))), e.m, e.weights))
    diss = float(_mean((hp - sig) ** 2, (hp_plus - sig) ** 2, e.m, e.weights))
    mm, m0, mp, hits = _node_bins(e, chart)
    inside = (e.X > chart.x_star_minus) & (e.X < chart.x_star_plus)
    ridge_pos = ridge_rho = float("nan")
    if np.any(inside) and e.K.size > 1:
        rho = node_density(e)
        j = int(np.flatnonzero(inside)[np.argmax(rho[inside])])
        ridge_pos, ridge_rho = float(e.X[j]), float(rho[j])
    return StateSnapshot(
        t=e.t,
        sigma=sig,
        ell=ell,
        energy=energy,
        dissipation=diss,
        m_minus=mm,
        m_zero=m0,
        m_plus=mp,
        x_minus_char=e.x_minus,
        x_plus_char=e.x_plus,
        ridge_pos=ridge_pos,
        ridge_density=ridge_rho,
        node_m_minus=mm,
        node_m_zero=m0,
        node_m_plus=mp,
        boundary_hits=hits,
    )


class LabelMap:
    """Inverse of the launch map ``K -> X(t0, K)`` and its derivative."""

    def __init__(self, X: np.ndarray, K: np.ndarray, jacobian: np.ndarray):
        self.X = np.asarray(X, dtype=float)
        self.K = np.asarray(K, dtype=float)
        self.J = np.asarray(jacobian, dtype=float)
        self._spline = CubicHermiteSpline(self.X, self.K, 1.0 / self.J, extrapolate=False)

    def __call__(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Labels and ``dK/dx`` at positions ``x`` (linear outside the node range)."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.X[0], self.X[-1]
        xc = np.clip(x, lo, hi)
        k = self._spline(xc)
        dk = self._spline(xc, 1)
        left, right = x < lo, x > hi
        k = np.where(left, self.K[0] + (x - lo) / self.J[0], k)
        k = np.where(right, self.K[-1] + (x - hi) / self.J[-1], k)
        dk = np.where(left, 1.0 / self.J[0], np.where(right, 1.0 / self.J[-1], dk))
        return k, dk


@dataclass
class FlowHistory:
    """Force history of a run, enough to trace any point back to the launch.

    ``stage_sigma[k]`` holds the four Runge-Kutta stage forces of step ``k``.
    """

    t0: float
    dt: float
    stage_sigma: np.ndarray
    sigma: np.ndarray
    x_minus: np.ndarray
    x_plus: np.ndarray
    m: float
    labels: LabelMap

    def time(self, k) -> np.ndarray:
        return self.t0 + self.dt * np.asarray(k, dtype=float)


def _forward_map(model: PotentialModel, y: np.ndarray, s: np.ndarray, h: float):
    """Passive Runge-Kutta step with given stage forces, and its derivative."""
    def f(x, sig):
        return -(model.dH(x) - sig)

    def fx(x):
        return -model.d2H(x)

    k1 = f(y, s[0])
    d1 = fx(y)
    y2 = y + 0.5 * h * k1
    k2 = f(y2, s[1])
    d2 = fx(y2) * (1 + 0.5 * h * d1)
    y3 = y + 0.5 * h * k2
    k3 = f(y3, s[2])
    d3 = fx(y3) * (1 + 0.5 * h * d2)
    y4 = y + h * k3
    k4 = f(y4, s[3])
    d4 = fx(y4) * (1 + h * d3)
    out = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    der = 1 + (h / 6.0) * (d1 + 2 * d2 + 2 * d3 + d4)
    return out, der


def trace_labels(
    history: FlowHistory,
    model: PotentialModel,
    start: np.ndarray,
    x: np.ndarray,
    newton_steps: int = 1,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Trace points ``x`` at step indices ``start`` back to the launch.

    Each backward step inverts the forward Runge-Kutta map of the recorded
    force history by Newton's method from an Euler guess, so traced points
    follow exactly the discrete flow the nodes follow.

    Returns:
        Labels ``K``, ``dK/dx`` at the launch, and the log of the forward
        Jacobian ``dx_t/dx_{t0}`` along each path.
    """
    start = np.asarray(start, dtype=int)
    x = np.asarray(x, dtype=float)
    order = np.argsort(-start, kind="stable")
    s_sorted = start[order]
    y = x[order].copy()
    logj = np.zeros_like(y)
    h = history.dt
    kmax = int(s_sorted[0]) if s_sorted.size else 0
    neg = -s_sorted
    for k in range(kmax - 1, -1, -1):
        n_act = int(np.searchsorted(neg, -(k + 1), side="right"))
        if n_act == 0:
            continue
        ya = y[:n_act]
        s = history.stage_sigma[k]
        g = ya + h * (model.dH(ya) - 0.5 * (s[1] + s[2]))
        for _ in range(newton_steps):
            val, der = _forward_map(model, g, s, h)
            g = g - (val - ya) / der
        y[:n_act] = g
        logj[:n_act] += np.log(der)
    kappa, dk = history.labels(y)
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return kappa[inv], dk[inv], logj[inv]


def distribution(history: FlowHistory, model: PotentialModel, k: int, x: np.ndarray) -> np.ndarray:
    """Distribution function ``R(x, t_k)`` including the atom at ``X_+``."""
    x = np.asarray(x, dtype=float)
    kap, _, _ = trace_labels(history, model, np.full(x.shape, k), x)
    R = history.m * 0.5 * erfc(-kap)
    return R + (1.0 - history.m) * (x >= history.x_plus[k])


def density(history: FlowHistory, model: PotentialModel, k: int, x: np.ndarray) -> np.ndarray:
    """Density of the interior population at ``(x, t_k)``."""
    x = np.asarray(x, dtype=float)
    kap, dk, lj = trace_labels(history, model, np.full(x.shape, k), x)
    return history.m * np.exp(-kap * kap) / _SQRT_PI * dk * np.exp(-lj)


@dataclass
class TimeSeries:
    """Snapshots of a run plus per-step traces and bound monitors.

    ``trace`` holds per-step arrays ``t``, ``sigma``, ``ell``, ``energy``,
    ``dissipation``; ``monitors`` the sup-bounds and ordering statistics.
    """

    snapshots: List[StateSnapshot]
    trace: Dict[str, np.ndarray] = field(default_factory=dict)
    monitors: Dict[str, float] = field(default_factory=dict)
    stats: Dict[str, float] = field(default_factory=dict)
    history: Optional[FlowHistory] = field(default=None, repr=False)
    final: Optional[CharacteristicEnsemble] = field(default=None, repr=False)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.snapshots], dtype=float)


def _spinodal_probes(chart: SpinodalChart, sigma: float, count: int) -> np.ndarray:
    lo, hi = chart.x_star_minus, chart.x_star_plus
    pts = list(lo + (hi - lo) * np.arange(1, count + 1) / (count + 1))
    if chart.sigma_star_minus < sigma < chart.sigma_star_plus:
        pts.append(branch_solve(chart, sigma, "zero"))
    else:
        pts.append(0.5 * (lo + hi))
    return np.array(pts)


def run(
    seed: CharacteristicEnsemble,
    model: PotentialModel,
    chart: SpinodalChart,
    t_end: float,
    dt: float = 1e-3,
    cadence: float = 0.1,
    probes: int = 5,
) -> TimeSeries:
    """Integrate the ensemble to ``t_end``, recording snapshots every ``cadence``.

    After the forward pass the spinodal points and a few spinodal probes of
    every snapshot are traced back to the launch to obtain the phase masses
    and the ridge of the transported density.

    Raises:
        OrderingError: On a characteristic crossing.
    """
    if seed.jacobian is None:
        raise ValueError("seed needs the launch Jacobian dX/dK")
    if not t_end > seed.t:
        raise ValueError("t_end must exceed the seed time")
    n_steps = int(round((t_end - seed.t) / dt))
    every = max(1, int(round(cadence / dt)))
    m, w = seed.m, seed.weights
    pos = seed.positions
    lg = seed.log_gaps if seed.log_gaps is not None else _initial_log_gaps(pos)
    _check_order(pos, lg)

    stages = np.empty((n_steps, 4))
    tr = {k: np.empty(n_steps + 1) for k in ("t", "sigma", "ell", "energy", "dissipation", "x_minus", "x_plus")}
    snaps_idx: List[int] = []
    snaps: List[StateSnapshot] = []
    min_lg = np.inf
    sup_gap = 0.0

    def record(k: int, pos: np.ndarray, lg: np.ndarray) -> None:
        hp = model.dH(pos)
        sig = _mean(hp[1:-1], hp[-1], m, w)
        tr["t"][k] = seed.t + k * dt
        tr["sigma"][k] = sig
        tr["ell"][k] = _mean(pos[1:-1], pos[-1], m, w)
        en = model.H(pos)
        tr["energy"][k] = _mean(en[1:-1], en[-1], m, w)
        dv = (hp - sig) ** 2
        tr["dissipation"][k] = _mean(dv[1:-1], dv[-1], m, w)
        tr["x_minus"][k] = pos[0]
        tr["x_plus"][k] = pos[-1]
        if k % every == 0 or k == n_steps:
            e = replace(seed, X=pos[1:-1], x_minus=float(pos[0]), x_plus=float(pos[-1]), t=seed.t + k * dt, log_gaps=lg)
            snaps_idx.append(k)
            snaps.append(functionals(e, model, chart))

    record(0, pos, lg)
    for k in range(n_steps):
        pos, lg, st = _rk4(model, pos, lg, m, w, dt)
        _check_order(pos, lg, dt)
        stages[k] = st
        min_lg = min(min_lg, float(lg.min()))
        sup_gap = max(sup_gap, float(pos[-1] - pos[0]))
        record(k + 1, pos, lg)

    final = replace(seed, X=pos[1:-1], x_minus=float(pos[0]), x_plus=float(pos[-1]), t=seed.t + n_steps * dt, log_gaps=lg)
    history = FlowHistory(
        t0=seed.t,
        dt=dt,
        stage_sigma=stages,
        sigma=tr["sigma"].copy(),
        x_minus=tr["x_minus"].copy(),
        x_plus=tr["x_plus"].copy(),
        m=m,
        labels=LabelMap(seed.X, seed.K, seed.jacobian),
    )
    snaps = _continuum_fill(history, model, chart, snaps_idx, snaps, probes)
    monitors = {
        "sup_abs_x_minus": float(np.max(np.abs(tr["x_minus"]))),
        "sup_abs_x_plus": float(np.max(np.abs(tr["x_plus"]))),
        "sup_abs_sigma": float(np.max(np.abs(tr["sigma"]))),
        "sup_spread": sup_gap,
        "min_log_gap": min_lg,
    }
    stats = {"steps": n_steps, "dt": dt, "snapshots": len(snaps)}
    return TimeSeries(snaps, tr, monitors, stats, history, final)


def _continuum_fill(
    history: FlowHistory,
    model: PotentialModel,
    chart: SpinodalChart,
    idx: Sequence[int],
    snaps: Sequence[StateSnapshot],
    probes: int,
) -> List[StateSnapshot]:
    lo, hi = chart.x_star_minus, chart.x_star_plus
    pts, starts = [], []
    per = probes + 3
    for k, s in zip(idx, snaps):
        pts.append(np.concatenate(([lo, hi], _spinodal_probes(chart, s.sigma, probes))))
        starts.append(np.full(per, k))
    x = np.concatenate(pts)
    kap, dk, lj = trace_labels(history, model, np.concatenate(starts), x)
    kap = kap.reshape(-1, per)
    rho = (history.m * np.exp(-kap * kap) / _SQRT_PI * dk.reshape(-1, per) * np.exp(-lj.reshape(-1, per)))
    R = history.m * 0.5 * erfc(-kap)
    out = []
    for j, (k, s) in enumerate(zip(idx, snaps)):
        xp = history.x_plus[k]
        r_lo = R[j, 0] + (1.0 - history.m) * (xp < lo)
        r_hi = R[j, 1] + (1.0 - history.m) * (xp <= hi)
        m_minus = float(r_lo)
        m_plus = float(1.0 - r_hi)
        i = int(np.argmax(rho[j, 2:]))
        out.append(
            replace(
                s,
                m_minus=m_minus,
                m_zero=float(r_hi - r_lo),
                m_plus=m_plus,
                ridge_pos=float(x.reshape(-1, per)[j, 2 + i]),
                ridge_density=float(rho[j, 2 + i]),
                rho_at_star_minus=float(rho[j, 0]),
                rho_at_star_plus=float(rho[j, 1]),
            )
        )
    return out
