"""Weak solutions of dx = f(t, x) dt + g(t) dB^H by rescaled fixed-point solves.

For 0 < a < 1 and an even k with kH > 1 the map

    F_n(X, a, x0)(t) = S_n X(t) - int_0^t a^k f(a^k s, x0 + S_n X(s)) ds
                                 - int_0^t a^{Hk} g(a^k s) dB^H_s

is discretized on a uniform grid of the rescaled time s in [0, T] and its
zero G is found per noise realization (Picard with a Neumann-series inverse
of S_n, or Newton-GMRES).  Setting x(t) = x0 + S_n G(t / eps^k) and
B~_{eps^k s} = eps^{kH} B_s gives a solution on [0, eps^k T] driven by the
fBm B~.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import expm
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import CapabilityError, ConvergenceError, DimensionError
from .hilbert import HilbertFbm, OperatorValuedFn
from .kernel import TimeGrid, as_hurst
from .rng import RngStream


@dataclass(frozen=True)
class DriftFn:
    """f(t, x) acting column-wise: t of shape (m,), x of shape (N, m) -> (N, m)."""

    evaluator: Callable
    N: int
    dt_evaluator: Callable | None = None
    dx_evaluator: Callable | None = None  # (t, x, v) -> d_x f(t, x) v
    growth_phi: Callable = lambda t: np.ones_like(np.asarray(t, dtype=float))

    def __call__(self, t, x):
        return np.asarray(self.evaluator(np.atleast_1d(t), x), dtype=float)

    def dt(self, t, x):
        if self.dt_evaluator is None:
            raise CapabilityError("drift has no time derivative")
        return np.asarray(self.dt_evaluator(np.atleast_1d(t), x), dtype=float)

    def dx(self, t, x, v):
        if self.dx_evaluator is None:
            raise CapabilityError("drift has no state derivative")
        return np.asarray(self.dx_evaluator(np.atleast_1d(t), x, v), dtype=float)

    @classmethod
    def linear(cls, A, phi: float | None = None) -> "DriftFn":
        """f(t, x) = A x, with constant growth function phi (default ||A||_2)."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        phi = float(np.linalg.norm(A, 2)) if phi is None else float(phi)
        return cls(
            lambda t, x: A @ x,
            A.shape[0],
            lambda t, x: np.zeros_like(x),
            lambda t, x, v: A @ v,
            lambda t: np.full(np.shape(t), phi),
        )

    @classmethod
    def zero(cls, N: int, phi: float = 1.0) -> "DriftFn":
        return cls.linear(np.zeros((N, N)), phi)


@dataclass(frozen=True)
class SmoothingFamily:
    """Diagonal smoothing operator S_n on the truncated coordinates."""

    n: int
    taper: np.ndarray

    @classmethod
    def spectral_taper(cls, n: int, N: int) -> "SmoothingFamily":
        """Multiply coordinate m (1-based) by max(0, 1 - m/(n+1)); zero beyond the cutoff n."""
        m = np.arange(1, N + 1)
        return cls(n, np.clip(1.0 - m / (n + 1.0), 0.0, None))

    @classmethod
    def identity(cls, N: int) -> "SmoothingFamily":
        return cls(0, np.ones(N))

    @property
    def N(self) -> int:
        return self.taper.size

    @property
    def operator_norm_defect(self) -> float:
        return float(np.max(np.abs(1.0 - self.taper)))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.taper.reshape((-1,) + (1,) * (x.ndim - 1)) * x

    def solve(self, y: np.ndarray) -> np.ndarray:
        """S_n^{-1} y.

        The Neumann series sum_j (I - S_n)^j converges when ||I - S_n|| < 1;
        for a diagonal S_n it sums in closed form to y / taper.
        """
        q = self.operator_norm_defect
        if q >= 1.0:
            raise ConvergenceError(f"||S_n - I|| = {q:.3g} >= 1: Neumann series diverges; raise smoothing_n")
        return y / self.taper.reshape((-1,) + (1,) * (y.ndim - 1))


def smallest_even_k(h) -> int:
    H = as_hurst(h).h
    k = 2
    while not k * H > 1:
        k += 2
    return k


@dataclass(frozen=True)
class ScalingParams:
    epsilon: float
    k: int
    h: float

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.k <= 0 or self.k % 2:
            raise ValueError("k must be a positive even integer")
        if not self.k * self.h > 1:
            raise ValueError(f"k H = {self.k * self.h} must exceed 1")

    @classmethod
    def auto(cls, h, epsilon: float = 0.5, k: int | None = None) -> "ScalingParams":
        H = as_hurst(h).h
        return cls(epsilon, smallest_even_k(H) if k is None else int(k), H)

    @property
    def time_factor(self) -> float:
        return self.epsilon**self.k


@dataclass(frozen=True)
class PathProcess:
    """Coefficients (N, n_steps+1) of a Hilbert-space path on ``grid``; x0 kept apart."""

    grid: TimeGrid
    coefficients: np.ndarray
    x0: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.ndim != 2 or c.shape[1] != self.grid.n_steps + 1:
            raise DimensionError(f"coefficients shape {c.shape} does not fit {self.grid}")
        if np.asarray(self.x0).shape != (c.shape[0],):
            raise DimensionError("x0 must be a vector of length N")
        if np.any(c[:, 0] != 0.0):
            raise ValueError("path coefficients must vanish at t = 0")

    @property
    def N(self) -> int:
        return self.coefficients.shape[0]

    @property
    def states(self) -> np.ndarray:
        return np.asarray(self.x0)[:, None] + self.coefficients

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.coefficients, axis=0)))


def _check_shapes(X: PathProcess, x0, drift: DriftFn, g: OperatorValuedFn, noise: HilbertFbm, smoothing):
    N = X.N
    if (drift.N, g.N, noise.q.N, smoothing.N, np.size(x0)) != (N,) * 5:
        raise DimensionError("drift, g, noise, smoothing and x0 must share the truncation N")
    if noise.grid != X.grid:
        raise DimensionError("noise and unknown must live on the same grid")
    if noise.is_ensemble:
        raise DimensionError("solves are per realization; pass a single HilbertFbm")


def stochastic_path(g: OperatorValuedFn, noise: HilbertFbm, prefactor: float = 1.0, time_scale: float = 1.0):
    """t_i -> sum_{j<i} prefactor g(time_scale * s_j) sqrt(lambda) dB_j, shape (N, n+1)."""
    s = noise.grid.points[:-1]
    G = g(time_scale * s)  # (n, N, N)
    dB = np.diff(noise.drivers, axis=-1) * np.sqrt(noise.q.eigenvalues)[:, None]
    steps = prefactor * np.einsum("jnm,mj->nj", G, dB)
    out = np.zeros((g.N, s.size + 1))
    np.cumsum(steps, axis=1, out=out[:, 1:])
    return out


def _drift_integral(values: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoid along the time axis, starting from 0."""
    out = np.zeros_like(values)
    np.cumsum(0.5 * dt * (values[:, 1:] + values[:, :-1]), axis=1, out=out[:, 1:])
    return out


def residual_Fn(
    X: PathProcess,
    params: ScalingParams,
    x0,
    drift: DriftFn,
    g: OperatorValuedFn,
    noise: HilbertFbm,
    smoothing: SmoothingFamily,
    a: float | None = None,
) -> PathProcess:
    """Discretized F_n(X, a, x0) for one noise realization (a defaults to epsilon)."""
    x0 = np.asarray(x0, dtype=float)
    _check_shapes(X, x0, drift, g, noise, smoothing)
    a = params.epsilon if a is None else float(a)
    H, k = noise.h.h, params.k
    s = X.grid.points
    Y = smoothing.apply(X.coefficients)
    ak = a**k
    D = ak * _drift_integral(drift(ak * s, x0[:, None] + Y), X.grid.dt)
    Z = stochastic_path(g, noise, a ** (H * k), ak)
    return PathProcess(X.grid, Y - D - Z, x0)


def _sup(r: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(r, axis=0)))


def picard_solve(
    params: ScalingParams,
    x0,
    drift: DriftFn,
    g: OperatorValuedFn,
    noise: HilbertFbm,
    smoothing: SmoothingFamily,
    tol: float = 1e-8,
    max_iter: int = 200,
    method: str = "picard",
    damping: float = 1.0,
) -> PathProcess:
    """Zero of F_n(., epsilon, x0) with sup-over-grid residual norm <= tol.

    Picard: X <- S_n^{-1}[int eps^k f(eps^k s, x0 + S_n X) ds + int eps^{Hk} g dB].
    ``method="newton"`` uses Newton steps with GMRES on :func:`jacobian_action`.
    """
    x0 = np.asarray(x0, dtype=float)
    grid = noise.grid
    N = x0.size
    X = PathProcess(grid, np.zeros((N, grid.n_steps + 1)), x0)
    _check_shapes(X, x0, drift, g, noise, smoothing)
    if method not in ("picard", "newton"):
        raise ValueError(f"unknown method {method!r}")
    a, k, H = params.epsilon, params.k, noise.h.h
    ak = a**k
    s = grid.points
    Z = stochastic_path(g, noise, a ** (H * k), ak)

    def D_of(Y):
        return ak * _drift_integral(drift(ak * s, x0[:, None] + Y), grid.dt)

    coeffs = X.coefficients
    history = []
    increases = 0
    D = D_of(smoothing.apply(coeffs))
    for it in range(1, max_iter + 1):
        if method == "picard":
            new = smoothing.solve(D + Z)
            new[:, 0] = 0.0
            coeffs = (1.0 - damping) * coeffs + damping * new if damping != 1.0 else new
        else:
            F = residual_Fn(replace(X, coefficients=coeffs), params, x0, drift, g, noise, smoothing)
            step = _newton_step(replace(X, coefficients=coeffs), F.coefficients, params, x0, drift, smoothing)
            coeffs = coeffs + step
            coeffs[:, 0] = 0.0
        Y = smoothing.apply(coeffs)
        D = D_of(Y)
        res = _sup(Y - D - Z)
        history.append(res)
        if res <= tol:
            return PathProcess(grid, coeffs, x0, {"iterations": it, "residual": res, "method": method})
        if not np.isfinite(res):
            raise ConvergenceError("iteration diverged to non-finite values; use a smaller epsilon", res, it)
        increases = increases + 1 if len(history) > 1 and res > history[-2] else 0
        if increases >= 5:
            raise ConvergenceError(
                f"residual increased over 5 consecutive iterations (now {res:.3e}); "
                "the map does not contract, use a smaller epsilon",
                res,
                it,
            )
    raise ConvergenceError(f"max_iter={max_iter} reached with residual {history[-1]:.3e}", history[-1], max_iter)


def _newton_step(X, F, params, x0, drift, smoothing):
    N, m = F.shape
    size = N * (m - 1)

    def mv(w):
        W = np.zeros((N, m))
        W[:, 1:] = w.reshape(N, m - 1)
        J = jacobian_action(X, (W, 0.0, np.zeros(N)), params, x0, drift, smoothing)
        return J.coefficients[:, 1:].ravel()

    op = LinearOperator((size, size), matvec=mv, dtype=float)
    sol, info = gmres(op, -F[:, 1:].ravel(), rtol=1e-13, atol=0.0, restart=min(size, 200), maxiter=50)
    if info != 0:
        raise ConvergenceError(f"GMRES failed in Newton step (info={info})")
    step = np.zeros((N, m))
    step[:, 1:] = sol.reshape(N, m - 1)
    return step


def jacobian_action(
    X: PathProcess,
    direction,
    params: ScalingParams,
    x0,
    drift: DriftFn,
    smoothing: SmoothingFamily,
    a: float | None = None,
    g: OperatorValuedFn | None = None,
    noise: HilbertFbm | None = None,
) -> PathProcess:
    """Directional derivative D F_n at (X, a, x0) in direction (W, b, y).

    Includes every term of the chain rule in a: the k a^{k-1} b f prefactor
    term, the d_t f . k a^{k-1} s b term, d_x f (y + S_n W), and for the noise
    term both H k a^{Hk-1} b g and k a^{Hk+k-1} s b d_t g.  ``g`` and ``noise``
    are needed only when b != 0.
    """
    W, b, y = direction
    W = np.asarray(W, dtype=float)
    y = np.asarray(y, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    a = params.epsilon if a is None else float(a)
    k = params.k
    grid = X.grid
    s = grid.points
    ak = a**k
    state = x0[:, None] + smoothing.apply(X.coefficients)
    SW = smoothing.apply(W)
    integrand = ak * drift.dx(ak * s, state, y[:, None] + SW)
    if b != 0.0:
        dak = k * a ** (k - 1)
        integrand = integrand + b * dak * drift(ak * s, state)
        integrand = integrand + b * ak * dak * s * drift.dt(ak * s, state)
    out = SW - _drift_integral(integrand, grid.dt)
    if b != 0.0:
        if g is None or noise is None:
            raise CapabilityError("b != 0 needs g and the noise realization")
        if g.time_derivative is None:
            raise CapabilityError("g has no time derivative")
        H = noise.h.h
        term1 = stochastic_path(g, noise, H * k * a ** (H * k - 1), ak)
        term2 = 0.0
        if ak > 0:
            # stochastic_path evaluates at r = a^k s, so s = r / a^k
            sdg = OperatorValuedFn(lambda r: g.dt(r) * (r / ak)[:, None, None], g.N)
            term2 = stochastic_path(sdg, noise, a ** (H * k) * k * a ** (k - 1), ak)
        out = out - b * (term1 + term2)
    out[:, 0] = 0.0
    return PathProcess(grid, out, x0)


def rescale_noise(noise: HilbertFbm, params: ScalingParams) -> HilbertFbm:
    """Driver-wise B~_{eps^k s} = eps^{kH} B_s on the grid scaled by eps^k."""
    factor = params.epsilon ** (params.k * noise.h.h)
    return replace(noise, drivers=noise.drivers * factor, grid=noise.grid.scaled(params.time_factor))


def rescale_to_solution(
    X: PathProcess, params: ScalingParams, noise: HilbertFbm, smoothing: SmoothingFamily
) -> tuple[PathProcess, HilbertFbm]:
    """x(t) = x0 + S_n G(t / eps^k) on [0, eps^k T] together with the rescaled fBm."""
    grid = X.grid.scaled(params.time_factor)
    sol = PathProcess(grid, smoothing.apply(X.coefficients), X.x0, dict(X.info))
    return sol, rescale_noise(noise, params)


def weak_solution_residual(
    solution: PathProcess, drift: DriftFn, g: OperatorValuedFn, noise: HilbertFbm
) -> np.ndarray:
    """||x(t) - x0 - int_0^t f(r, x(r)) dr - int_0^t g(r) dB~_r|| at every grid time."""
    if noise.grid != solution.grid:
        raise DimensionError("solution and rescaled noise grids differ")
    r = solution.grid.points
    x = solution.states
    D = _drift_integral(drift(r, x), solution.grid.dt)
    Z = stochastic_path(g, noise)
    return np.linalg.norm(solution.coefficients - D - Z, axis=0)


def euler_oracle(x0, drift: DriftFn, g: OperatorValuedFn, noise: HilbertFbm, grid: TimeGrid | None = None) -> PathProcess:
    """Explicit Euler x_{i+1} = x_i + f(t_i, x_i) dt + g(t_i) dB_i on the noise grid."""
    grid = noise.grid if grid is None else grid
    if grid != noise.grid:
        raise DimensionError("euler_oracle runs on the grid of the supplied noise")
    x0 = np.asarray(x0, dtype=float)
    t = grid.points
    dB = np.diff(noise.drivers, axis=-1) * np.sqrt(noise.q.eigenvalues)[:, None]
    G = g(t[:-1])
    x = np.empty((x0.size, t.size))
    x[:, 0] = x0
    for i in range(grid.n_steps):
        fx = drift(t[i : i + 1], x[:, i : i + 1])[:, 0]
        x[:, i + 1] = x[:, i] + fx * grid.dt + G[i] @ dB[:, i]
    return PathProcess(grid, x - x0[:, None], x0)


@dataclass(frozen=True)
class WeakSolver:
    """Bundles the inputs of one weak-solution pipeline run."""

    drift: DriftFn
    g: OperatorValuedFn
    noise: HilbertFbm
    smoothing: SmoothingFamily
    params: ScalingParams
    tol: float = 1e-8
    max_iter: int = 200
    method: str = "picard"

    def solve_fixed_point(self, x0) -> PathProcess:
        return picard_solve(
            self.params, x0, self.drift, self.g, self.noise, self.smoothing, self.tol, self.max_iter, self.method
        )

    def solve(self, x0) -> tuple[PathProcess, HilbertFbm]:
        X = self.solve_fixed_point(x0)
        return rescale_to_solution(X, self.params, self.noise, self.smoothing)


def subsample_noise(noise: HilbertFbm, n_steps: int) -> HilbertFbm:
    """The same realization observed on a coarser grid (every r-th point)."""
    r, rem = divmod(noise.grid.n_steps, n_steps)
    if rem or r < 1:
        raise DimensionError("coarse grid must divide the noise grid")
    return replace(noise, drivers=noise.drivers[..., ::r], grid=TimeGrid(noise.grid.horizon, n_steps))


@dataclass(frozen=True)
class RefinementStudy:
    n_steps: tuple
    gaps: tuple
    weak_residuals: tuple
    picard_residuals: tuple

    @property
    def ratios(self) -> tuple:
        return tuple(a / b for a, b in zip(self.gaps[:-1], self.gaps[1:]))


def euler_refinement(
    drift: DriftFn,
    g: OperatorValuedFn,
    noise: HilbertFbm,
    params: ScalingParams,
    x0,
    n_list=(32, 64, 128),
    smoothing: SmoothingFamily | None = None,
    tol: float = 1e-10,
) -> RefinementStudy:
    """Sup-norm gap between the weak solution and euler_oracle on one realization, per grid.

    ``noise`` is sampled on the finest grid; coarser solves see its subsampled
    drivers, so every level shares the same underlying path.
    """
    x0 = np.asarray(x0, dtype=float)
    smoothing = smoothing or SmoothingFamily.spectral_taper(8 * x0.size, x0.size)
    gaps, weak, pic = [], [], []
    for n in n_list:
        level = subsample_noise(noise, n)
        sol, tilde = WeakSolver(drift, g, level, smoothing, params, tol).solve(x0)
        ref = euler_oracle(x0, drift, g, tilde)
        gaps.append(float(np.max(np.linalg.norm(sol.states - ref.states, axis=0))))
        weak.append(float(np.max(weak_solution_residual(sol, drift, g, tilde))))
        pic.append(float(sol.info["residual"]))
    return RefinementStudy(tuple(n_list), tuple(gaps), tuple(weak), tuple(pic))


def jacobian_fd_error(
    X: PathProcess,
    params: ScalingParams,
    x0,
    drift: DriftFn,
    g: OperatorValuedFn,
    noise: HilbertFbm,
    smoothing: SmoothingFamily,
    rng: RngStream,
    delta: float = 1e-5,
) -> float:
    """Relative sup-norm gap between jacobian_action and a central difference of residual_Fn.

    The direction (W, b, y) is random in all three arguments.
    """
    x0 = np.asarray(x0, dtype=float)
    gen = rng.generator()
    W = gen.standard_normal(X.coefficients.shape)
    W[:, 0] = 0.0
    b = float(gen.standard_normal())
    y = gen.standard_normal(x0.size)
    a = params.epsilon

    def F(sign):
        Xs = replace(X, coefficients=X.coefficients + sign * delta * W, x0=x0 + sign * delta * y)
        return residual_Fn(Xs, params, x0 + sign * delta * y, drift, g, noise, smoothing, a + sign * delta * b).coefficients

    fd = (F(1.0) - F(-1.0)) / (2 * delta)
    J = jacobian_action(X, (W, b, y), params, x0, drift, smoothing, a, g, noise).coefficients
    return _sup(fd - J) / max(_sup(J), 1e-300)


def sensitivity_x0(solver: WeakSolver, x0, delta: float, direction: int = 0) -> float:
    """sup_t ||x(t; x0 + delta e_j) - x(t; x0)|| / delta on one noise realization."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    x0 = np.asarray(x0, dtype=float)
    base, _ = solver.solve(x0)
    bumped_x0 = x0.copy()
    bumped_x0[direction] += delta
    bumped, _ = solver.solve(bumped_x0)
    return float(np.max(np.linalg.norm(bumped.states - base.states, axis=0)) / delta)


def linear_flow_sup(A, horizon: float, n: int = 200, direction: int = 0) -> float:
    """sup_{t <= horizon} ||exp(A t) e_j||, the ODE-flow reference for sensitivity_x0."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    e = np.zeros(A.shape[0])
    e[direction] = 1.0
    return max(float(np.linalg.norm(expm(A * t) @ e)) for t in np.linspace(0.0, horizon, n + 1))


@dataclass(frozen=True)
class HypothesisReport:
    ratios: dict
    passed: bool
    worst_magnitude: dict

    def __str__(self):
        lines = [f"{k}: max ratio {v:.4g} (at |x|~{self.worst_magnitude[k]:g})" for k, v in self.ratios.items()]
        return "\n".join(lines + [f"pass={self.passed}"])


def validate_hypotheses(
    drift: DriftFn,
    g: OperatorValuedFn,
    probes: int,
    rng: RngStream,
    horizon: float = 1.0,
    magnitudes=(1.0, 10.0, 100.0),
    slack: float = 1e-9,
) -> HypothesisReport:
    """Probe the three growth conditions at random (t, x, v) and report max ratios.

    (1) |f| + |d_t f| <= phi (1 + |x|)   (2) |d_x f v|^2 <= phi^2 (1 + |x|^2 + |v|^2)
    (3) |g v| + |d_t g v| <= phi |v|.  Missing derivatives count as zero.
    """
    if probes < 100:
        raise ValueError("need at least 100 probes")
    gen = rng.generator()
    N = drift.N
    ratios = {"drift_growth": 0.0, "drift_jacobian": 0.0, "noise_growth": 0.0}
    worst = {key: 0.0 for key in ratios}
    for mag in magnitudes:
        t = gen.uniform(0.0, horizon, probes)
        x = gen.standard_normal((N, probes))
        x *= mag / np.linalg.norm(x, axis=0)
        v = gen.standard_normal((N, probes))
        v *= gen.choice(np.asarray(magnitudes), probes) / np.linalg.norm(v, axis=0)
        phi = np.asarray(drift.growth_phi(t), dtype=float)
        nx = np.linalg.norm(x, axis=0)
        nv = np.linalg.norm(v, axis=0)
        f = np.linalg.norm(drift(t, x), axis=0)
        ft = np.linalg.norm(drift.dt(t, x), axis=0) if drift.dt_evaluator else 0.0
        fx = np.linalg.norm(drift.dx(t, x, v), axis=0) if drift.dx_evaluator else 0.0
        G = g(t)
        gv = np.linalg.norm(np.einsum("pnm,mp->np", G, v), axis=0)
        dG = g.dt(t)
        gtv = np.linalg.norm(np.einsum("pnm,mp->np", dG, v), axis=0) if dG is not None else 0.0
        checks = {
            "drift_growth": (f + ft) / (phi * (1 + nx)),
            "drift_jacobian": fx**2 / (phi**2 * (1 + nx**2 + nv**2)),
            "noise_growth": (gv + gtv) / (phi * nv),
        }
        for key, val in checks.items():
            m = float(np.max(val))
            if m > ratios[key]:
                ratios[key] = m
                worst[key] = mag
    passed = all(r <= 1 + slack for r in ratios.values())
    return HypothesisReport(ratios, passed, worst)
