"""Trace-class fBm in a separable Hilbert space, truncated to N eigen-directions.

Coordinates are always taken in the eigenbasis {e_n} of Q, so an element of
the Hilbert space is a length-N vector and an operator is an N x N matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DimensionError
from .kernel import (
    HurstParam,
    Regime,
    TimeGrid,
    as_hurst,
    inner_product_H,
    kernel_KH,
    khstar_parts,
)
from .quadrature import QuadratureSpec, integrate_singular
from .rng import RngStream, stream_normals
from .sampler import Method, _draws_per_path, _transform


@dataclass(frozen=True)
class SpectralOperatorQ:
    eigenvalues: np.ndarray
    basis_descriptor: str = "abstract"
    trace_tail_bound: float = 0.0

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.ndim != 1 or lam.size < 1:
            raise DimensionError("eigenvalues must be a non-empty 1-D array")
        if np.any(lam < 0):
            raise ValueError("eigenvalues must be non-negative")
        if np.any(np.diff(lam) > 1e-15 * lam.max(initial=0.0)):
            raise ValueError("eigenvalues must be non-increasing")
        if self.trace_tail_bound < 0:
            raise ValueError("trace_tail_bound must be >= 0")
        object.__setattr__(self, "eigenvalues", lam)

    @classmethod
    def power_decay(cls, p: float, N: int) -> "SpectralOperatorQ":
        """lambda_n = n^-p, n = 1..N, with the integral tail bound N^(1-p)/(p-1)."""
        if p <= 1:
            raise ValueError("p > 1 is required for a trace-class operator")
        lam = np.arange(1, N + 1, dtype=float) ** (-p)
        return cls(lam, f"power_decay(p={p})", N ** (1 - p) / (p - 1))

    @property
    def N(self) -> int:
        return self.eigenvalues.size

    @property
    def trace(self) -> float:
        return float(self.eigenvalues.sum())

    def truncated(self, N: int) -> "SpectralOperatorQ":
        tail = self.trace_tail_bound + float(self.eigenvalues[N:].sum())
        return SpectralOperatorQ(self.eigenvalues[:N], self.basis_descriptor, tail)

    def tail_is_small(self, fraction: float = 0.01) -> bool:
        return self.trace_tail_bound < fraction * self.trace


@dataclass(frozen=True)
class HilbertFbm:
    """B^H_t = sum_n sqrt(lambda_n) B^n_t e_n on a grid.

    ``drivers`` has shape (N, n_steps + 1), or (P, N, n_steps + 1) for an
    ensemble of P independent realizations.
    """

    q: SpectralOperatorQ
    drivers: np.ndarray
    h: HurstParam
    grid: TimeGrid
    seed: int
    stream_id: int = 0
    method: Method = Method.CHOLESKY

    def __post_init__(self):
        d = np.asarray(self.drivers)
        if d.shape[-2:] != (self.q.N, self.grid.n_steps + 1):
            raise DimensionError(f"drivers shape {d.shape} does not match N={self.q.N}, grid={self.grid}")

    @property
    def coefficients(self) -> np.ndarray:
        return np.sqrt(self.q.eigenvalues)[:, None] * self.drivers

    @property
    def is_ensemble(self) -> bool:
        return self.drivers.ndim == 3

    def norm_sq(self) -> np.ndarray:
        """||B^H_t||^2 at every grid time."""
        return np.sum(self.coefficients**2, axis=-2)

    def member(self, i: int) -> "HilbertFbm":
        return HilbertFbm(self.q, self.drivers[i], self.h, self.grid, self.seed, self.stream_id + i, self.method)


def sample_hilbert_fbm(
    q: SpectralOperatorQ, h, grid: TimeGrid, rng: RngStream, method: Method | str = Method.CHOLESKY
) -> HilbertFbm:
    """One realization; the N drivers are the rows of a single (N, k) normal draw of ``rng``."""
    return sample_hilbert_ensemble(q, h, grid, rng.seed, 1, rng.stream_id, method).member(0)


def sample_hilbert_ensemble(
    q: SpectralOperatorQ,
    h,
    grid: TimeGrid,
    seed: int,
    n_paths: int,
    first_stream: int = 0,
    method: Method | str = Method.CHOLESKY,
) -> HilbertFbm:
    method = Method(method)
    hp = as_hurst(h)
    k = _draws_per_path(method, grid.n_steps)
    z = stream_normals(seed, first_stream, n_paths, (q.N, k))
    paths, _ = _transform(method, grid, hp, z.reshape(n_paths * q.N, k))
    drivers = paths.reshape(n_paths, q.N, grid.n_steps + 1)
    return HilbertFbm(q, drivers, hp, grid, seed, first_stream, method)


@dataclass(frozen=True)
class OperatorValuedFn:
    """t -> N x N matrix in the e-basis, vectorized: t of shape (m,) -> (m, N, N)."""

    evaluator: Callable
    N: int
    time_derivative: Callable | None = None
    smoothness_hint: str = "C1"
    breakpoints: tuple = field(default=())

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.asarray(self.evaluator(t), dtype=float)
        return np.broadcast_to(out, (t.size, self.N, self.N))

    def dt(self, t):
        if self.time_derivative is None:
            return None
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.broadcast_to(np.asarray(self.time_derivative(t), dtype=float), (t.size, self.N, self.N))

    @classmethod
    def constant(cls, matrix) -> "OperatorValuedFn":
        m = np.asarray(matrix, dtype=float)
        return cls(lambda t: m[None], m.shape[0], lambda t: np.zeros((1,) + m.shape), "C1")

    @classmethod
    def identity(cls, N: int, scale: float = 1.0) -> "OperatorValuedFn":
        return cls.constant(scale * np.eye(N))

    @classmethod
    def zero(cls, N: int) -> "OperatorValuedFn":
        return cls.constant(np.zeros((N, N)))

    @classmethod
    def diag_time(cls, N: int) -> "OperatorValuedFn":
        """g(t) = t * I."""
        eye = np.eye(N)
        return cls(lambda t: t[:, None, None] * eye, N, lambda t: np.broadcast_to(eye, (t.size, N, N)))

    def scaled_time(self, a: float, k: int, prefactor: float = 1.0, time_weight: bool = False):
        """s -> prefactor * [s *] g(a^k s)."""
        ak = a**k

        def ev(s):
            vals = self(ak * s) * prefactor
            return vals * s[:, None, None] if time_weight else vals

        return OperatorValuedFn(ev, self.N, None, self.smoothness_hint, tuple(b / ak for b in self.breakpoints))


def integrate_operator(g: OperatorValuedFn, noise: HilbertFbm, v_basis: np.ndarray | None = None) -> np.ndarray:
    """Coordinates  sum_m sqrt(lambda_m) int <g(t) e_m, v_n> dB^m_t  (left-point sums).

    ``v_basis`` columns are the v_n in e-coordinates (default: the e-basis).
    Returns shape (N,) or (P, N) for an ensemble.
    """
    if g.N != noise.q.N:
        raise DimensionError("operator and noise truncations differ")
    t = noise.grid.points[:-1]
    G = g(t)  # (n, N, N)
    dB = np.diff(noise.drivers, axis=-1) * np.sqrt(noise.q.eigenvalues)[:, None]
    n_t, N = G.shape[0], g.N
    # out[p, n] = sum_{i,m} G[i, n, m] dB[p, m, i]
    lhs = np.swapaxes(dB, -1, -2).reshape(dB.shape[:-2] + (n_t * N,))
    out = lhs @ G.transpose(0, 2, 1).reshape(n_t * N, N)
    if v_basis is not None:
        out = out @ np.asarray(v_basis)
    return out


def _weighted(g: OperatorValuedFn, q: SpectralOperatorQ):
    root = np.sqrt(q.eigenvalues)

    def F(t):
        return g(t) * root[None, None, :]

    F.breakpoints = g.breakpoints
    return F


def second_moment_formula(
    g: OperatorValuedFn, q: SpectralOperatorQ, h, t_end: float, quad: QuadratureSpec | None = None
) -> float:
    """E||int_0^t_end g dB^H||^2 by deterministic quadrature.

    H >= 1/2: sum_k lambda_k H(2H-1) int int <g(t)e_k, g(s)e_k> |t-s|^(2H-2) ds dt
    (the plain L^2 integral at H = 1/2).  H < 1/2: sum_k lambda_k int ||K^* g(s) e_k||^2 ds,
    assembled from its three terms K(T,s)^2 ||g e_k||^2, the cross term and the
    double d_tK integral, with K^* taken at horizon t_end.
    """
    hp = as_hurst(h)
    quad = quad or QuadratureSpec(tol=1e-9)
    if g.N != q.N:
        raise DimensionError("operator and Q truncations differ")
    F = _weighted(g, q)
    if hp.regime is not Regime.ROUGH:
        return inner_product_H(F, F, hp, t_end, quad)

    H = hp.h

    def integrand(u):
        out = []
        for s in np.atleast_1d(u):
            lead, tail = khstar_parts(F, float(s), hp, t_end, quad)
            square = np.sum(lead**2)
            cross = 2.0 * np.sum(lead * tail)
            double = np.sum(tail**2)
            out.append(square + cross + double)
        return np.array(out)

    edges = [0.0, *sorted(b for b in g.breakpoints if 0 < b < t_end), t_end]
    total = 0.0
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        left = 2 * H - 1 if i == 0 else 0.0
        total += float(integrate_singular(integrand, lo, hi, left=left, right=2 * H - 1, spec=quad))
    return total


def lemma1_constant(h, T: float, quad: QuadratureSpec | None = None) -> float:
    """C(H, T) as printed: H(2H-1) int int |t-s|^(2H-2) for H > 1/2.

    For H < 1/2 the printed expression contains int_s^T |d_tK_H(t,s)| dt, and
    d_tK_H(t,s) ~ (t-s)^(H-3/2) is not integrable at t = s, so the constant is
    +inf.  At H = 1/2 the L^2 bound gives C = T.
    """
    hp = as_hurst(h)
    if hp.regime is Regime.STANDARD:
        return float(T)
    if hp.regime is Regime.ROUGH:
        return math.inf
    one = _Const1()
    return inner_product_H(one, one, hp, T, quad)


class _Const1:
    breakpoints = ()

    def __call__(self, t):
        return np.ones(np.shape(t))


def lemma1_rough_first_term(h, T: float) -> float:
    """int_0^T K(T, s)^2 ds, the only finite term of C(H, T) for H < 1/2."""
    hp = as_hurst(h)
    H = hp.h
    return float(
        integrate_singular(lambda s: kernel_KH(T, s, hp) ** 2, 0.0, T, left=-abs(2 * H - 1), right=2 * H - 1)
    )


@dataclass(frozen=True)
class Lemma1Form:
    mc_moment: float
    se: float
    bound: float
    sup_norm_sq: float
    hypothesis_ok: bool
    passed: bool
    threshold: float

    @property
    def vacuous(self) -> bool:
        return math.isinf(self.bound)


@dataclass(frozen=True)
class Lemma1Report:
    a: float
    k: int
    h: float
    c_ht: float
    g_form: Lemma1Form
    h_form: Lemma1Form

    @property
    def passed(self) -> bool:
        return self.g_form.passed and self.h_form.passed


def _sup_column_norm_sq(g: OperatorValuedFn, times) -> float:
    G = g(times)
    return float(np.max(np.sum(G**2, axis=1)))


def _mc_second_moment(g: OperatorValuedFn, noise: HilbertFbm):
    vals = np.sum(integrate_operator(g, noise) ** 2, axis=-1)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def _form(g_scaled, g_sup, c_ht, a, k, H, q, noise, times, z_mc) -> Lemma1Form:
    moment, se = _mc_second_moment(g_scaled, noise)
    sup = _sup_column_norm_sq(g_sup, times)
    ok = bool(np.isfinite(sup))
    bound = c_ht * a ** (2 * H * k) * sup * q.trace
    # Monte Carlo tolerance: the estimate may exceed the bound by z_mc standard errors
    passed = moment <= bound + z_mc * se
    return Lemma1Form(moment, se, bound, sup, ok, bool(passed and ok), bound + z_mc * se)


def lemma1_battery(N: int) -> list[tuple[str, OperatorValuedFn, OperatorValuedFn]]:
    """Shipped (name, g, h) integrand pairs for the moment-bound check."""
    ident = OperatorValuedFn.identity(N)
    ramp = OperatorValuedFn.diag_time(N)
    return [("identity", ident, ident), ("diag_t", ramp, ramp)]


def lemma1_check(
    g: OperatorValuedFn,
    h_fn: OperatorValuedFn,
    q: SpectralOperatorQ,
    h,
    a: float,
    k: int,
    n_paths: int,
    grid: TimeGrid,
    seed: int = 0,
    noise: HilbertFbm | None = None,
    z_mc: float = 4.0,
) -> Lemma1Report:
    """Monte Carlo moments of the two rescaled integrals against the C(H,T) bound.

    Forms:  a^{Hk} int_0^T g(a^k s) dB^H  and  a^{Hk} int_0^T s h(a^k s) dB^H.
    The sup in each bound runs over grid times r and eigen-directions j of
    ||g(a^k r) e_j||^2 (resp. ||r h(a^k r) e_j||^2).
    """
    hp = as_hurst(h)
    H = hp.h
    T = grid.horizon
    if noise is None:
        noise = sample_hilbert_ensemble(q, hp, grid, seed, n_paths)
    c_ht = lemma1_constant(hp, T)
    times = grid.points
    pre = a ** (H * k)
    g_scaled = g.scaled_time(a, k, pre)
    h_scaled = h_fn.scaled_time(a, k, pre, time_weight=True)
    g_sup = g.scaled_time(a, k)
    h_sup = h_fn.scaled_time(a, k, time_weight=True)
    # hypothesis (sup over [0, T] of ||g(r)e_j||^2 and ||r h(r) e_j||^2) on the grid
    hyp = np.isfinite(_sup_column_norm_sq(g, times)) and np.isfinite(
        _sup_column_norm_sq(h_fn.scaled_time(1.0, 1, time_weight=True), times)
    )
    gf = _form(g_scaled, g_sup, c_ht, a, k, H, q, noise, times, z_mc)
    hf = _form(h_scaled, h_sup, c_ht, a, k, H, q, noise, times, z_mc)
    if not hyp:
        gf = replace(gf, hypothesis_ok=False, passed=False)
        hf = replace(hf, hypothesis_ok=False, passed=False)
    return Lemma1Report(a, int(k), H, c_ht, gf, hf)
