"""Quasi-linear heat equation du = [alpha u_xx + beta u + gamma u_x] dt + dB^H on a periodic domain.

Spectral Galerkin in the real orthonormal Fourier basis of L^2(0, L):

    index 0      : 1 / sqrt(L)
    index 2m - 1 : sqrt(2/L) cos(kappa_m x)
    index 2m     : sqrt(2/L) sin(kappa_m x),        kappa_m = 2 pi m / L,

truncated to the first ``n_modes`` functions.  Each (cos, sin) pair carries
the complex multiplier mu_m = -alpha kappa_m^2 + beta + i gamma kappa_m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError
from .hilbert import HilbertFbm, OperatorValuedFn, SpectralOperatorQ, sample_hilbert_ensemble, sample_hilbert_fbm
from .kernel import TimeGrid, as_hurst
from .rng import RngStream
from .solver import (
    DriftFn,
    PathProcess,
    ScalingParams,
    SmoothingFamily,
    WeakSolver,
)


@dataclass(frozen=True)
class HeatParams:
    alpha: float = 0.1
    beta: float = 0.0
    gamma: float = 0.5
    L: float = 2 * math.pi
    n_modes: int = 9

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.L <= 0:
            raise ValueError("domain period must be positive")
        if self.n_modes < 2:
            raise ValueError("need n_modes >= 2")

    @property
    def mode_numbers(self) -> np.ndarray:
        """Fourier number m of every real coordinate."""
        idx = np.arange(self.n_modes)
        return (idx + 1) // 2

    @property
    def max_mode(self) -> int:
        return int(self.mode_numbers[-1])

    def wavenumber(self, m) -> np.ndarray:
        return 2 * np.pi * np.asarray(m) / self.L

    def multiplier(self, m) -> np.ndarray:
        kap = self.wavenumber(m)
        return -self.alpha * kap**2 + self.beta + 1j * self.gamma * kap


def drift_matrix(params: HeatParams) -> np.ndarray:
    N = params.n_modes
    A = np.zeros((N, N))
    A[0, 0] = params.beta
    for m in range(1, params.max_mode + 1):
        c, s = 2 * m - 1, 2 * m
        mu = params.multiplier(m)
        A[c, c] = mu.real
        if s < N:
            A[s, s] = mu.real
            # gamma d/dx maps cos -> -kappa sin and sin -> kappa cos
            A[c, s] = mu.imag
            A[s, c] = -mu.imag
    return A


def assemble_drift(params: HeatParams) -> DriftFn:
    """Linear drift diagonal in Fourier, with constant phi = max(1, max_m |mu_m|).

    The floor at 1 lets the same phi bound the identity noise operator.
    """
    A = drift_matrix(params)
    mus = params.multiplier(np.arange(params.max_mode + 1))
    phi = max(1.0, float(np.max(np.abs(mus))))
    return DriftFn.linear(A, phi)


def noise_operator(params: HeatParams, p: float = 2.0) -> SpectralOperatorQ:
    """Q diagonal in the same basis with lambda = (1 + kappa_m^2)^(-p/2)."""
    lam = (1.0 + params.wavenumber(params.mode_numbers) ** 2) ** (-p / 2)
    M = params.max_mode
    # tail over the dropped modes (two real coordinates each), bounded by an integral
    kap = params.wavenumber(1)
    tail = 2 * sum((1 + (kap * m) ** 2) ** (-p / 2) for m in range(M + 1, M + 2000))
    return SpectralOperatorQ(lam, f"fourier(L={params.L}, p={p})", tail)


@dataclass(frozen=True)
class FourierState:
    """Complex coefficients v_m, m = -M..M (index m + M), of a real periodic function."""

    coefficients: np.ndarray
    L: float = 2 * math.pi

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        if c.ndim != 1 or c.size % 2 == 0:
            raise ConsistencyError("need 2M + 1 coefficients for modes -M..M")
        object.__setattr__(self, "coefficients", c)

    @property
    def M(self) -> int:
        return (self.coefficients.size - 1) // 2

    def mode(self, m: int) -> complex:
        return complex(self.coefficients[m + self.M])

    def check_symmetry(self, atol: float = 1e-12):
        c = self.coefficients
        if np.max(np.abs(c - np.conj(c[::-1])), initial=0.0) > atol * max(1.0, np.max(np.abs(c))):
            raise ConsistencyError("coefficients are not conjugate symmetric")

    @classmethod
    def from_real(cls, coords, params: HeatParams) -> "FourierState":
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (params.n_modes,):
            raise ConsistencyError("coordinate vector does not match n_modes")
        M = params.max_mode
        L = params.L
        c = np.zeros(2 * M + 1, dtype=complex)
        c[M] = coords[0] / math.sqrt(L)
        for m in range(1, M + 1):
            re = coords[2 * m - 1]
            im = -coords[2 * m] if 2 * m < coords.size else 0.0
            v = (re + 1j * im) / math.sqrt(2 * L)
            c[M + m] = v
            c[M - m] = np.conj(v)
        return cls(c, L)

    def to_real(self, params: HeatParams) -> np.ndarray:
        self.check_symmetry()
        if self.M > params.max_mode:
            raise ConsistencyError("state has more modes than the truncation")
        L = params.L
        out = np.zeros(params.n_modes)
        out[0] = self.mode(0).real * math.sqrt(L)
        for m in range(1, self.M + 1):
            v = self.mode(m) * math.sqrt(2 * L)
            out[2 * m - 1] = v.real
            if 2 * m < params.n_modes:
                out[2 * m] = -v.imag
        return out

    def h2_norm_sq(self) -> float:
        m = np.arange(-self.M, self.M + 1)
        kap = 2 * np.pi * m / self.L
        return float(np.sum((1 + kap**2) ** 2 * np.abs(self.coefficients) ** 2))


def physical_snapshot(state: FourierState, n_points: int) -> np.ndarray:
    """u(x_j), x_j = j L / n_points, by inverse DFT."""
    state.check_symmetry()
    if n_points < 2 * state.M + 1:
        raise ValueError("n_points must resolve every mode")
    buf = np.zeros(n_points, dtype=complex)
    for m in range(-state.M, state.M + 1):
        buf[m % n_points] += state.coefficients[m + state.M]
    u = n_points * np.fft.ifft(buf)
    if np.max(np.abs(u.imag), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(u.real), initial=0.0)):
        raise ConsistencyError("inverse transform is not real")
    return u.real


def default_smoothing(N: int) -> SmoothingFamily:
    return SmoothingFamily.spectral_taper(8 * N, N)


def heat_solver(
    params: HeatParams,
    noise: HilbertFbm,
    scaling: ScalingParams,
    smoothing: SmoothingFamily | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
    method: str = "picard",
) -> WeakSolver:
    N = params.n_modes
    return WeakSolver(
        assemble_drift(params),
        OperatorValuedFn.identity(N),
        noise,
        smoothing or default_smoothing(N),
        scaling,
        tol,
        max_iter,
        method,
    )


def solve_heat_spde(
    params: HeatParams,
    v0: FourierState,
    h,
    q: SpectralOperatorQ,
    scaling: ScalingParams,
    rng: RngStream,
    grid: TimeGrid | None = None,
    smoothing: SmoothingFamily | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
    method: str = "picard",
) -> tuple[PathProcess, HilbertFbm]:
    """Weak solution on [0, eps^k T] for one noise realization; returns (solution, rescaled noise)."""
    grid = grid or TimeGrid(1.0, 128)
    if q.N != params.n_modes:
        raise ValueError("noise truncation must equal n_modes")
    x0 = v0.to_real(params)
    if not math.isfinite(v0.h2_norm_sq()):
        raise ValueError("initial datum is not in H^2")
    noise = sample_hilbert_fbm(q, as_hurst(h), grid, rng)
    return heat_solver(params, noise, scaling, smoothing, tol, max_iter, method).solve(x0)


def solve_heat_ensemble(
    params: HeatParams,
    v0: FourierState,
    h,
    q: SpectralOperatorQ,
    scaling: ScalingParams,
    seed: int,
    n_paths: int,
    grid: TimeGrid | None = None,
    smoothing: SmoothingFamily | None = None,
    tol: float = 1e-8,
    chunk: int = 1000,
):
    """Solution states (n_paths, N, n_steps+1) on the shrunken grid, path i from stream i."""
    grid = grid or TimeGrid(1.0, 128)
    x0 = v0.to_real(params)
    hp = as_hurst(h)
    states = np.empty((n_paths, params.n_modes, grid.n_steps + 1))
    out_grid = None
    for lo in range(0, n_paths, chunk):
        ens = sample_hilbert_ensemble(q, hp, grid, seed, min(chunk, n_paths - lo), lo)
        for i in range(ens.drivers.shape[0]):
            sol, _ = heat_solver(params, ens.member(i), scaling, smoothing, tol).solve(x0)
            states[lo + i] = sol.states
            out_grid = sol.grid
    return out_grid, states


def complex_mode(states: np.ndarray, m: int, params: HeatParams) -> np.ndarray:
    """Complex coefficient v_m from real coordinates along the last-but-one axis."""
    L = params.L
    if m == 0:
        return states[..., 0, :] / math.sqrt(L) + 0j
    re = states[..., 2 * m - 1, :]
    im = -states[..., 2 * m, :] if 2 * m < params.n_modes else 0.0
    return (re + 1j * im) / math.sqrt(2 * L)
