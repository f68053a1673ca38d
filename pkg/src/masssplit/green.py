"""Causal convolution operator, its characteristic function and Green's function.

The operator acts on functions of time defined on ``(-inf, t_end]``::

    L phi(t) = phi(t) - m a U_a phi(t) - (1-m) b U_b phi(t),
    U_c f(t) = int_{-inf}^t exp(-c (t - z)) f(z) dz.

Exponentials are eigenfunctions, ``L e^{kt} = C(k) e^{kt}`` with
``C(k) = 1 - m a/(a+k) - (1-m) b/(b+k)``, and the inverse is convolution
with ``delta_0 + G_r`` where ``G_r(x) = c1 + c2 exp(theta2 x)`` for ``x >= 0``.

Functions are sampled on a uniform grid and carry an exponential tail
``coef * exp(rate * t)`` that represents them left of the grid, so the
semi-infinite parts of every convolution are integrated in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import StabilityError

ArrayLike = Union[float, np.ndarray]

# exponent budget per block of the factorized kernel exp(-c(t-z))
_BLOCK_EXPONENT = 200.0
RESIDUE_ANOMALY = 1e-12


@dataclass(frozen=True)
class Sampled:
    """A function on a uniform grid plus its exponential left tail.

    ``values`` may carry leading batch axes; the last axis runs along ``t``.
    ``tail_coef`` broadcasts against the batch axes.  ``tail_rate=None``
    means no tail was declared.
    """

    t: np.ndarray
    values: np.ndarray
    tail_coef: ArrayLike = 0.0
    tail_rate: Optional[float] = None

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def with_values(self, values: np.ndarray, tail_coef: ArrayLike) -> "Sampled":
        return replace(self, values=values, tail_coef=tail_coef)

    def __add__(self, other: "Sampled") -> "Sampled":
        return _combine(self, other, 1.0)

    def __sub__(self, other: "Sampled") -> "Sampled":
        return _combine(self, other, -1.0)

    def scale(self, s: ArrayLike) -> "Sampled":
        s_arr = np.asarray(s)
        return self.with_values(self.values * s_arr[..., None] if s_arr.ndim else self.values * s, np.asarray(self.tail_coef) * s)


def _combine(f: Sampled, g: Sampled, sign: float) -> Sampled:
    if f.tail_rate is not None and g.tail_rate is not None and f.tail_rate != g.tail_rate:
        raise ValueError("tail rates differ; refit before combining")
    rate = f.tail_rate if f.tail_rate is not None else g.tail_rate
    return Sampled(f.t, f.values + sign * g.values, np.asarray(f.tail_coef) + sign * np.asarray(g.tail_coef), rate)


def uniform_grid(t_left: float, t_right: float, dt: float) -> np.ndarray:
    """Uniform grid ending exactly at ``t_right`` with step ``dt``."""
    n = int(np.ceil((t_right - t_left) / dt - 1e-9))
    return t_right - dt * np.arange(n, -1, -1, dtype=float)


def sampled_with_tail(t: np.ndarray, values: np.ndarray, rate: float) -> Sampled:
    """Attach a tail of the given rate matched to the leftmost sample."""
    values = np.asarray(values, dtype=float)
    coef = values[..., 0] * np.exp(-rate * t[0])
    return Sampled(t, values, coef, float(rate))


def causal_convolve(f: Sampled, c: float) -> Sampled:
    """``U_c f(t) = int_{-inf}^t exp(-c(t-z)) f(z) dz`` on the grid of ``f``.

    The gridded part uses cumulative Simpson on blocks over which the
    factorized kernel ``exp(c(z-s))`` stays within a safe exponent range; the
    part left of the grid is integrated exactly from the tail.
    """
    t, v = f.t, np.asarray(f.values, dtype=float)
    dt = f.dt
    n = t.size
    out = np.empty_like(v)
    if abs(c) > 0:
        block = max(2, int(_BLOCK_EXPONENT / (abs(c) * dt)))
    else:
        block = n
    starts = list(range(0, n - 1, block))
    if len(starts) > 1 and n - 1 - starts[-1] < 2:
        starts.pop()
    carry = np.zeros(v.shape[:-1])
    for k, i0 in enumerate(starts):
        i1 = starts[k + 1] if k + 1 < len(starts) else n - 1
        seg = t[i0 : i1 + 1] - t[i0]
        grow = np.exp(c * seg)
        integ = cumulative_simpson(v[..., i0 : i1 + 1] * grow, dx=dt, initial=0.0, axis=-1)
        res = (integ + carry[..., None]) / grow
        out[..., i0 : i1 + 1] = res
        carry = res[..., -1]

    coef = np.asarray(f.tail_coef, dtype=float)
    new_coef: ArrayLike = 0.0
    if np.any(coef != 0.0):
        if f.tail_rate is None:
            raise ValueError("tail descriptor required")
        r = f.tail_rate
        if not r + c > 0:
            raise ValueError(f"non-integrable tail: rate {r} with kernel rate {c}")
        left = coef * np.exp(r * t[0]) / (r + c)
        out = out + left[..., None] * np.exp(-c * (t - t[0]))
        new_coef = coef / (r + c)
    return Sampled(t, out, new_coef, f.tail_rate)


@dataclass(frozen=True)
class ConvolutionKernels:
    """Curvatures ``a < 0``, ``b > 0`` and the mass fraction ``m``.

    Raises:
        StabilityError: On construction if ``(1-m)a + mb <= 0``.
    """

    a: float
    b: float
    m: float

    def __post_init__(self) -> None:
        if not self.a < 0 or not self.b > 0:
            raise ValueError("kernels need a < 0 < b")
        if not 0 < self.m <= 1:
            raise ValueError("m must be in (0,1]")
        if not (1 - self.m) * self.a + self.m * self.b > 0:
            raise StabilityError(f"stability violated: (1-m)a+mb = {self.stability:.6g} <= 0")

    @property
    def stability(self) -> float:
        return (1 - self.m) * self.a + self.m * self.b

    def K0(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.a * np.exp(-self.a * np.maximum(t, 0.0)), 0.0)

    def Kplus(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.b * np.exp(-self.b * np.maximum(t, 0.0)), 0.0)


def charfn(kernels: ConvolutionKernels, theta: Union[float, complex, np.ndarray]):
    """``C(theta) = 1 - m a/(a+theta) - (1-m) b/(b+theta)``.

    Raises:
        ValueError: At the poles ``-a`` and ``-b``.
    """
    a, b, m = kernels.a, kernels.b, kernels.m
    th = np.asarray(theta)
    if np.any(th == -a) or np.any(th == -b):
        raise ValueError("pole of C")
    val = 1 - m * a / (a + th) - (1 - m) * b / (b + th)
    return val if val.ndim else val[()]


def charfn_factorized(kernels: ConvolutionKernels, theta):
    a, b, m = kernels.a, kernels.b, kernels.m
    th = np.asarray(theta)
    val = th * (th + (1 - m) * a + m * b) / ((th + a) * (th + b))
    return val if val.ndim else val[()]


@dataclass(frozen=True)
class GreenFunction:
    """``G = delta_0 + G_r`` with ``G_r(x) = res_c1 + res_c2 exp(theta2 x)``, x >= 0."""

    kernels: ConvolutionKernels
    theta2: float
    res_c1: float
    res_c2: float

    @property
    def anomaly(self) -> bool:
        """True when the constant residue vanishes numerically."""
        return abs(self.res_c1) < RESIDUE_ANOMALY

    def regular(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, self.res_c1 + self.res_c2 * np.exp(self.theta2 * np.maximum(x, 0.0)), 0.0)

    def transfer(self, rate: float) -> float:
        """Gain of ``G`` on ``exp(rate t)``: ``1 + c1/rate + c2/(rate - theta2)``."""
        return 1.0 + self.res_c1 / rate + self.res_c2 / (rate - self.theta2)


def _numerator_residue(kernels: ConvolutionKernels, theta: float, theta2: float) -> float:
    a, b, m = kernels.a, kernels.b, kernels.m
    B = theta * (m * a + (1 - m) * b) + a * b
    # derivative of theta (theta - theta2), the numerator of C
    return B / (2 * theta - theta2)


def build_green(kernels: ConvolutionKernels) -> GreenFunction:
    """Closed-form Green's function from the two roots of ``C``."""
    theta2 = -kernels.stability
    c1 = _numerator_residue(kernels, 0.0, theta2)
    c2 = _numerator_residue(kernels, theta2, theta2)
    return GreenFunction(kernels, theta2, c1, c2)


def apply_L(kernels: ConvolutionKernels, phi: Sampled) -> Sampled:
    """Apply the convolution operator; the tail maps to ``C(rate) * coef``.

    Raises:
        ValueError: If ``phi`` has a non-zero tail and no declared rate.
    """
    if phi.tail_rate is None and np.any(np.asarray(phi.tail_coef) != 0):
        raise ValueError("tail descriptor required")
    a, b, m = kernels.a, kernels.b, kernels.m
    ua = causal_convolve(phi, a)
    ub = causal_convolve(phi, b)
    vals = phi.values - m * a * ua.values - (1 - m) * b * ub.values
    coef = np.asarray(phi.tail_coef, dtype=float)
    if phi.tail_rate is not None and np.any(coef != 0):
        coef = coef * charfn(kernels, phi.tail_rate)
    return Sampled(phi.t, vals, coef, phi.tail_rate)


def invert_via_green(green: GreenFunction, W: Sampled) -> Sampled:
    """Solve ``L phi = W`` as ``phi = W + int_{-inf}^t G_r(t - eta) W(eta) d eta``.

    Raises:
        ValueError: If the tail of ``W`` does not decay fast enough for the
            result to lie in the domain of the operator.
    """
    k = green.kernels
    coef = np.asarray(W.tail_coef, dtype=float)
    if np.any(coef != 0):
        if W.tail_rate is None:
            raise ValueError("tail descriptor required")
        if not W.tail_rate > max(0.0, -k.a, -k.b):
            raise ValueError(f"non-integrable tail: rate {W.tail_rate}")
    u0 = causal_convolve(W, 0.0)
    u2 = causal_convolve(W, -green.theta2)
    vals = W.values + green.res_c1 * u0.values + green.res_c2 * u2.values
    new_coef = coef * green.transfer(W.tail_rate) if np.any(coef != 0) else 0.0
    return Sampled(W.t, vals, new_coef, W.tail_rate)


def numeric_theta2(kernels: ConvolutionKernels) -> float:
    """Negative root of ``C`` by bracketing between the pole ``-b`` and 0."""
    from scipy.optimize import brentq

    if kernels.m >= 1:
        raise ValueError("for m = 1 the decay root cancels against the pole -b")
    f = lambda th: float(charfn(kernels, th))  # noqa: E731
    lo = -kernels.b * (1 - 1e-12)
    hi = -kernels.stability / 2
    return float(brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))


def verify_green(green: GreenFunction, x_max: float = 20.0, dt: float = 1e-3) -> float:
    """Sup error of ``L G_r`` against ``m a e^{-ax} + (1-m) b e^{-bx}`` on ``[0, x_max]``.

    The error at each point is divided by ``max(1, |target|)`` because the
    target grows like ``e^{|a| x}``.
    """
    k = green.kernels
    x = uniform_grid(0.0, x_max, dt)
    gr = Sampled(x, green.regular(x), 0.0, None)
    lg = apply_L(k, gr).values
    target = k.m * k.a * np.exp(-k.a * x) + (1 - k.m) * k.b * np.exp(-k.b * x)
    return float(np.max(np.abs(lg - target) / np.maximum(1.0, np.abs(target))))
