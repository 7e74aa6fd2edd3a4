"""Scalar fBm mathematics: covariance, Volterra kernel, constants, K_H^* and <.,.>_H."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.special import betaln

from .errors import DomainError, RegimeError
from .quadrature import DEFAULT_SPEC, QuadratureSpec, gauss_legendre, integrate_singular


class Regime(enum.Enum):
    ROUGH = "rough"
    STANDARD = "standard"
    SMOOTH = "smooth"


@dataclass(frozen=True)
class HurstParam:
    h: float

    def __post_init__(self):
        h = float(self.h)
        if not (0.0 < h < 1.0):
            raise DomainError(f"Hurst parameter must lie in (0, 1), got {self.h!r}")
        object.__setattr__(self, "h", h)

    @property
    def regime(self) -> Regime:
        if self.h < 0.5:
            return Regime.ROUGH
        if self.h > 0.5:
            return Regime.SMOOTH
        return Regime.STANDARD

    def __float__(self):
        return self.h


def as_hurst(h) -> HurstParam:
    return h if isinstance(h, HurstParam) else HurstParam(h)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition 0 = t_0 < ... < t_n = T."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError("n_steps must be a positive integer")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @cached_property
    def points(self) -> np.ndarray:
        pts = self.dt * np.arange(self.n_steps + 1)
        pts[-1] = self.horizon
        return pts

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def __len__(self):
        return self.n_steps + 1

    def scaled(self, factor: float) -> "TimeGrid":
        return TimeGrid(self.horizon * factor, self.n_steps)

    def index_of(self, t: float, rtol: float = 1e-9) -> int:
        """Grid index of ``t``; raises if ``t`` is not (numerically) a grid point."""
        x = t / self.dt
        i = int(round(x))
        if abs(x - i) > rtol * max(1.0, abs(x)) or not 0 <= i <= self.n_steps:
            raise DomainError(f"{t} is not a point of {self}")
        return i


@dataclass(frozen=True)
class ScalarFn:
    """Deterministic integrand on [0, T].

    ``breakpoints`` lists interior jump locations; quadrature splits there.
    """

    evaluator: Callable
    smoothness_hint: str = "C1"
    breakpoints: tuple = field(default=())

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.asarray(self.evaluator(t), dtype=float)
        if out.shape[: t.ndim] != t.shape:
            out = np.broadcast_to(out, t.shape + out.shape[t.ndim:]).copy()
        return out

    @classmethod
    def constant(cls, c: float) -> "ScalarFn":
        return cls(lambda t: np.full(np.shape(t), float(c)), "Simple")

    @classmethod
    def indicator(cls, a: float, b: float) -> "ScalarFn":
        """chi_[a, b)."""
        cuts = tuple(x for x in (a, b) if x > 0)
        return cls(lambda t: ((t >= a) & (t < b)).astype(float), "Simple", cuts)

    @classmethod
    def linear(cls, slope: float = 1.0, intercept: float = 0.0) -> "ScalarFn":
        return cls(lambda t: intercept + slope * np.asarray(t, dtype=float), "C1")


def _check_time(*ts):
    for t in ts:
        if np.any(np.asarray(t) < 0):
            raise DomainError("times must be non-negative")


def covariance_RH(t, s, h) -> np.ndarray | float:
    """E[B_t B_s] = (s^2H + t^2H - |t-s|^2H) / 2."""
    _check_time(t, s)
    H2 = 2.0 * as_hurst(h).h
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    out = 0.5 * (s**H2 + t**H2 - np.abs(t - s) ** H2)
    return float(out) if out.ndim == 0 else out


def covariance_matrix(points, h) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    return covariance_RH(p[:, None], p[None, :], h)


class BetaConvention(enum.Enum):
    # beta(a, b) = Gamma(a)Gamma(b)/Gamma(a+b)
    STANDARD = "standard"
    # beta(a, b) = Gamma(a+b)/(Gamma(a)Gamma(b)), the reciprocal
    RECIPROCAL = "reciprocal"


# Shipped default; fixed by factorization_check (see tests/test_kernel.py).
DEFAULT_CONVENTION = BetaConvention.STANDARD


def beta_fn(a: float, b: float, convention: BetaConvention = DEFAULT_CONVENTION) -> float:
    lb = betaln(a, b)
    return math.exp(lb if convention is BetaConvention.STANDARD else -lb)


@dataclass(frozen=True)
class KernelConstants:
    b_h: float
    c_h: float
    beta_convention: BetaConvention

    def for_regime(self, regime: Regime) -> float:
        return self.b_h if regime is Regime.ROUGH else self.c_h


def kernel_constants(h, convention: BetaConvention = DEFAULT_CONVENTION) -> KernelConstants:
    hp = as_hurst(h)
    H = hp.h
    if hp.regime is Regime.STANDARD:
        raise RegimeError("H = 1/2: the kernel is identically 1, no constant is defined")
    if hp.regime is Regime.ROUGH:
        b = math.sqrt(2 * H / ((1 - 2 * H) * beta_fn(1 - 2 * H, H + 0.5, convention)))
        return KernelConstants(b_h=b, c_h=float("nan"), beta_convention=convention)
    c = math.sqrt(H * (2 * H - 1) / beta_fn(2 - 2 * H, H - 0.5, convention))
    return KernelConstants(b_h=float("nan"), c_h=c, beta_convention=convention)


# ---------------------------------------------------------------------------
# Volterra kernel


# each level doubles the node array; 6 levels is 640 nodes per geometric panel
_MAX_KERNEL_LEVELS = 6


def _power_integral(s, t, alpha, gamma_exp, spec: QuadratureSpec, chunk: int = 2048):
    """Vectorized  int_s^t (u - s)^alpha u^gamma_exp du  for arrays 0 < s < t.

    After u = s + (t - s) v^p with p = 1/(1 + alpha) the integrand in v is
    (s + (t - s) v^p)^gamma_exp, smooth except for a transition layer at
    v ~ (s / (t - s))^(1/p).  Panels are graded geometrically towards that
    layer and every panel is bisected level by level until two successive
    levels agree to ``spec.tol``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty_like(s)
    # chunks of similar s/(t-s) share the same panel depth
    order = np.argsort(s / (t - s))
    for lo in range(0, s.size, chunk):
        idx = order[lo : lo + chunk]
        out[idx] = _power_integral_chunk(s[idx], t[idx], alpha, gamma_exp, spec)
    return out


def _power_integral_chunk(s, t, alpha, gamma_exp, spec):
    p = 1.0 / (1.0 + alpha)
    width = t - s
    vstar = (s / width) ** (1.0 / p)
    first = np.clip(vstar / 4.0, 1e-300, 1.0)
    n_geo = int(max(1, math.ceil(math.log2(1.0 / float(first.min())))))
    # edges[:, 0] = 0, edges[:, j] = first^(1 - (j-1)/n_geo), j = 1..n_geo+1
    j = np.arange(n_geo + 1)
    geo = first[:, None] ** (1.0 - j[None, :] / n_geo)
    edges = np.concatenate([np.zeros((s.size, 1)), geo], axis=1)
    x, w = gauss_legendre(spec.order)

    def level(L):
        m = 2**L
        sub = (np.arange(m + 1) / m)
        e = edges[:, :-1, None] + np.diff(edges, axis=1)[:, :, None] * sub[None, None, :]
        e = np.concatenate([e[:, :, :-1].reshape(s.size, -1), edges[:, -1:]], axis=1)
        hw = np.diff(e, axis=1)
        v = e[:, :-1, None] + hw[:, :, None] * x[None, None, :]
        vals = (s[:, None, None] + width[:, None, None] * v**p) ** gamma_exp
        return np.einsum("ijk,ij,k->i", vals, hw, w)

    prev = level(0)
    for L in range(1, spec.max_levels + 1):
        cur = level(L)
        err = np.max(np.abs(cur - prev) / np.maximum(np.abs(cur), 1e-300))
        prev = cur
        if err < spec.tol or L >= min(spec.max_levels, _MAX_KERNEL_LEVELS):
            break
    return width ** (alpha + 1.0) / (alpha + 1.0) * prev


def kernel_KH(t, s, h, consts: KernelConstants | None = None, quad: QuadratureSpec = DEFAULT_SPEC):
    """Volterra kernel K_H(t, s), 0 < s < t; accepts scalars or broadcastable arrays."""
    hp = as_hurst(h)
    t_arr, s_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    if np.any(s_arr <= 0) or np.any(s_arr >= t_arr):
        raise DomainError("kernel_KH requires 0 < s < t")
    scalar = t_arr.ndim == 0
    if hp.regime is Regime.STANDARD:
        out = np.ones(t_arr.shape)
        return float(out) if scalar else out
    if consts is None:
        consts = kernel_constants(hp)
    H = hp.h
    tf, sf = t_arr.ravel(), s_arr.ravel()
    if hp.regime is Regime.SMOOTH:
        inner = _power_integral(sf, tf, H - 1.5, H - 0.5, quad)
        out = consts.c_h * sf ** (0.5 - H) * inner
    else:
        inner = _power_integral(sf, tf, H - 0.5, H - 1.5, quad)
        lead = (tf * (tf - sf) / sf) ** (H - 0.5)
        out = consts.b_h * (lead - (H - 0.5) * sf ** (0.5 - H) * inner)
    out = out.reshape(t_arr.shape)
    return float(out) if scalar else out


def kernel_dt(t, s, h, consts: KernelConstants | None = None):
    """Closed-form partial_t K_H(t, s) = C (H-1/2)^[H<1/2] (t/s)^(H-1/2) (t-s)^(H-3/2)."""
    hp = as_hurst(h)
    if hp.regime is Regime.STANDARD:
        return np.zeros(np.broadcast(np.asarray(t), np.asarray(s)).shape)
    if consts is None:
        consts = kernel_constants(hp)
    H = hp.h
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if hp.regime is Regime.SMOOTH:
        pre = consts.c_h
    else:
        pre = consts.b_h * (H - 0.5)
    return pre * (t / s) ** (H - 0.5) * (t - s) ** (H - 1.5)


def factorization_check(
    t: float,
    s: float,
    h,
    convention: BetaConvention = DEFAULT_CONVENTION,
    quad: QuadratureSpec = DEFAULT_SPEC,
) -> float:
    """Relative defect |int_0^{s^t} K(t,u) K(s,u) du - R_H(t,s)| / R_H(t,s) for s, t > 0."""
    if not (s > 0 and t > 0):
        raise DomainError("factorization_check requires s, t > 0")
    s, t = min(s, t), max(s, t)
    hp = as_hurst(h)
    target = covariance_RH(t, s, hp)
    if hp.regime is Regime.STANDARD:
        return abs(s - target) / target
    consts = kernel_constants(hp, convention)
    H = hp.h
    right = 2 * H - 1 if s == t else H - 0.5

    def integrand(u):
        return kernel_KH(t, u, hp, consts, quad) * kernel_KH(s, u, hp, consts, quad)

    val = integrate_singular(integrand, 0.0, s, left=-abs(2 * H - 1), right=right, spec=quad)
    return abs(val - target) / target


# ---------------------------------------------------------------------------
# K_H^* and the inner product


def _horizon(grid) -> float:
    return grid.horizon if isinstance(grid, TimeGrid) else float(grid)


def _breaks(f) -> tuple:
    return tuple(getattr(f, "breakpoints", ()))


def _graded_cuts(breaks, s: float, T: float) -> tuple:
    """Breakpoints plus cuts c + d (2^j - 1), d = c - s, after every jump c > s.

    Past a jump the integrand still carries (t - s)^(H - 3/2), which is steep
    when s sits just below c; geometric panels keep each piece well resolved.
    """
    cuts = []
    for c in breaks:
        if not s < c < T:
            continue
        cuts.append(c)
        d = c - s
        step = d
        while c + step < T:
            cuts.append(c + step)
            step *= 2.0
    return tuple(sorted(cuts))


def khstar_parts(f, s: float, h, T: float, quad: QuadratureSpec = DEFAULT_SPEC):
    """The two pieces of K_H^* f(s): (K(T,s) f(s), int_s^T (f(t)-f(s)) d_tK(t,s) dt).

    ``f`` may be vector-valued (trailing axes are preserved).
    """
    hp = as_hurst(h)
    if hp.regime is not Regime.ROUGH:
        raise RegimeError("K_H^* is only used for H < 1/2")
    if not 0 < s < T:
        raise DomainError("khstar_apply requires 0 < s < T")
    consts = kernel_constants(hp)
    fs = np.asarray(f(np.array([s])), dtype=float)[0]
    if not np.all(np.isfinite(fs)):
        raise DomainError("integrand is not finite")
    lead = kernel_KH(T, s, hp, consts, quad) * fs

    def integrand(t):
        ft = np.asarray(f(t), dtype=float)
        dk = kernel_dt(t, s, hp, consts)
        diff = ft - fs
        return diff * dk.reshape(dk.shape + (1,) * (diff.ndim - 1))

    tail = integrate_singular(
        integrand, s, T, left=hp.h - 0.5, right=0.0, spec=quad, breakpoints=_graded_cuts(_breaks(f), s, T)
    )
    if not np.all(np.isfinite(tail)):
        raise DomainError("integrand is not finite on [s, T]")
    return lead, tail


def khstar_apply(f, s: float, h, grid, quad: QuadratureSpec = DEFAULT_SPEC):
    """K_H^* f(s) = K(T,s) f(s) + int_s^T (f(t) - f(s)) d_t K_H(t,s) dt, for H < 1/2."""
    lead, tail = khstar_parts(f, s, h, _horizon(grid), quad)
    out = lead + tail
    return float(out) if np.ndim(out) == 0 else out


def _pieces(T, *fns):
    cuts = sorted({c for f in fns for c in _breaks(f) if 0 < c < T})
    return [0.0, *cuts, T]


def inner_product_H(f, g, h, grid, quad: QuadratureSpec | None = None) -> float:
    """<f, g>_H on [0, T] with T the grid horizon.

    Vector-valued f, g are contracted componentwise (sum of <f_i, g_i>_H).
    """
    hp = as_hurst(h)
    T = _horizon(grid)
    quad = quad or QuadratureSpec(tol=1e-9)
    H = hp.h
    edges = _pieces(T, f, g)

    def contract(a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return (a * b).reshape(a.shape[0], -1).sum(axis=1) if a.ndim > 1 else a * b

    if hp.regime is Regime.STANDARD:
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            total += float(integrate_singular(lambda u: contract(f(u), g(u)), lo, hi, spec=quad))
        return total

    if hp.regime is Regime.SMOOTH:
        inner_f = _riemann_liouville(f, H, quad)
        inner_g = _riemann_liouville(g, H, quad)

        def outer(t):
            return contract(g(t), inner_f(t)) + contract(f(t), inner_g(t))

        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            total += float(integrate_singular(outer, lo, hi, spec=quad))
        return H * (2 * H - 1) * total

    def outer(u):
        vals = []
        for s in np.atleast_1d(u):
            kf = np.add(*khstar_parts(f, float(s), hp, T, quad))
            kg = np.add(*khstar_parts(g, float(s), hp, T, quad))
            vals.append(float(np.sum(kf * kg)))
        return np.array(vals)

    total = 0.0
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        left = 2 * H - 1 if i == 0 else 0.0
        total += float(integrate_singular(outer, lo, hi, left=left, right=2 * H - 1, spec=quad))
    return total


def _riemann_liouville(f, H, quad):
    """t -> int_0^t f(s) (t - s)^(2H-2) ds, vectorized over t by looping."""
    brk = _breaks(f)

    def inner(t):
        out = []
        for ti in np.atleast_1d(t):
            ti = float(ti)
            if ti <= 0:
                out.append(np.zeros_like(np.asarray(f(np.array([0.0])), dtype=float)[0]))
                continue

            def integrand(s, ti=ti):
                v = np.asarray(f(s), dtype=float)
                w = (ti - s) ** (2 * H - 2)
                return v * w.reshape(w.shape + (1,) * (v.ndim - 1))

            out.append(integrate_singular(integrand, 0.0, ti, right=2 * H - 2, spec=quad, breakpoints=brk))
        return np.array(out)

    return inner
