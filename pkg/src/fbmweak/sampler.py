"""Scalar fBm path generation, self-similar rescaling and Hurst estimation.

Three exact-in-law (or consistent) samplers share one contract: given a grid,
a Hurst parameter and an :class:`RngStream`, return a path with B_0 = 0.
Ensembles draw path ``i`` from ``RngStream(seed, first + i)``, so any single
member can be regenerated on its own.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import EstimationError, NumericalError
from .kernel import HurstParam, Regime, TimeGrid, as_hurst, covariance_RH, kernel_KH, kernel_constants
from .quadrature import QuadratureSpec, gauss_legendre
from .rng import RngStream, stream_normals


class Method(enum.Enum):
    CHOLESKY = "cholesky"
    CIRCULANT = "circulant"
    VOLTERRA = "volterra"
    RESCALED = "rescaled"


@dataclass(frozen=True)
class Provenance:
    method: Method
    parent: "Provenance | None" = None
    note: str = ""

    def describe(self) -> str:
        s = self.method.value + (f"[{self.note}]" if self.note else "")
        return s if self.parent is None else f"{s}<-{self.parent.describe()}"


@dataclass(frozen=True)
class FbmPath:
    grid: TimeGrid
    values: np.ndarray
    h: HurstParam
    provenance: Provenance
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[-1] != self.grid.n_steps + 1:
            raise ValueError("values must have n_steps + 1 entries")
        if np.any(v[..., 0] != 0.0):
            raise ValueError("fBm paths start at exactly 0")

    @property
    def times(self) -> np.ndarray:
        return self.grid.points


@dataclass(frozen=True)
class FbmEnsemble:
    """``values[i]`` is the path drawn from RngStream(seed, first_stream + i)."""

    grid: TimeGrid
    values: np.ndarray
    h: HurstParam
    provenance: Provenance
    seed: int
    first_stream: int = 0
    fallback_count: int = field(default=0)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def path(self, i: int) -> FbmPath:
        return FbmPath(self.grid, self.values[i], self.h, self.provenance, self.seed, self.first_stream + i)


def fgn_autocovariance(k, h) -> np.ndarray:
    """Unit-step fGn autocovariance (|k+1|^2H + |k-1|^2H - 2|k|^2H) / 2."""
    H2 = 2.0 * as_hurst(h).h
    k = np.abs(np.asarray(k, dtype=float))
    return 0.5 * (np.abs(k + 1) ** H2 + np.abs(k - 1) ** H2 - 2 * k**H2)


# ---------------------------------------------------------------------------
# Cholesky (increment space)


@lru_cache(maxsize=64)
def _increment_factor(n: int, H: float, dt: float) -> np.ndarray:
    k = np.arange(n)
    gam = fgn_autocovariance(k, H) * dt ** (2 * H)
    cov = gam[np.abs(k[:, None] - k[None, :])]
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.trace(cov) / n
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"increment covariance not PSD after jitter {jitter:.1e}") from exc


def _rowwise(z: np.ndarray, M: np.ndarray) -> np.ndarray:
    """z @ M.T with a reduction order independent of the number of rows.

    BLAS picks different kernels for different batch sizes, which would make an
    ensemble member differ in the last bit from the same stream drawn alone.
    """
    return np.einsum("pk,jk->pj", z, M, optimize=False)


def _cholesky_paths(grid: TimeGrid, hp: HurstParam, z: np.ndarray) -> np.ndarray:
    if grid.n_steps + 1 > 4096:
        raise ValueError("Cholesky sampling is limited to 4096 grid points")
    L = _increment_factor(grid.n_steps, hp.h, grid.dt)
    inc = _rowwise(z, L)
    return np.concatenate([np.zeros((z.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)


# ---------------------------------------------------------------------------
# Circulant embedding (Davies-Harte)

CLIP_FLOOR = -1e-8


@lru_cache(maxsize=64)
def _circulant_eigs(n: int, H: float) -> np.ndarray | None:
    gam = fgn_autocovariance(np.arange(n + 1), H)
    row = np.concatenate([gam, gam[-2:0:-1]])
    lam = np.fft.fft(row).real
    if lam.min() < CLIP_FLOOR:
        return None
    return np.clip(lam, 0.0, None)


def _circulant_paths(grid: TimeGrid, hp: HurstParam, z: np.ndarray):
    """``z`` has 4n columns.  Returns (paths, fell_back)."""
    n = grid.n_steps
    lam = _circulant_eigs(n, hp.h)
    if lam is None:
        return _cholesky_paths(grid, hp, z[:, :n]), True
    m = 2 * n
    w = z[:, :m] + 1j * z[:, m:]
    fgn = np.fft.fft(np.sqrt(lam / m) * w, axis=1)[:, :n].real
    inc = fgn * grid.dt**hp.h
    return np.concatenate([np.zeros((z.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1), False


# ---------------------------------------------------------------------------
# Volterra kernel with cell-averaged weights

_CELL_SPEC = QuadratureSpec(tol=1e-9)


def _cell_rule(a, b, left, right, order=12, panels=3):
    """Nodes/weights for int_a^b with endpoint power substitution on both halves."""
    x, w = gauss_legendre(order)
    sub = (np.arange(panels)[:, None] + x[None, :]).ravel() / panels
    wsub = np.tile(w, panels) / panels
    m = 0.5 * (a + b)
    half = m - a
    nodes, weights = [], []
    for expo, anchor, sign in ((left, a, 1.0), (right, b, -1.0)):
        p = 1.0 / (1.0 + min(expo, 0.0))
        nodes.append(anchor + sign * half * sub**p)
        weights.append(wsub * half * p * sub ** (p - 1.0))
    return np.concatenate(nodes), np.concatenate(weights)


@lru_cache(maxsize=16)
def volterra_matrix(n: int, horizon: float, H: float) -> np.ndarray:
    """M[i-1, j] = (1/dt) int_{s_j}^{s_{j+1}} K_H(t_i, u) du for j < i (lower triangular)."""
    grid = TimeGrid(horizon, n)
    hp = HurstParam(H)
    if hp.regime is Regime.STANDARD:
        return np.tril(np.ones((n, n)))
    consts = kernel_constants(hp)
    t_pts, s_pts = grid.points, grid.points
    x, w = gauss_legendre(12)
    sing = -abs(H - 0.5)
    tt, uu, ww, rows, cols = [], [], [], [], []
    for i in range(1, n + 1):
        for j in range(i):
            a, b = s_pts[j], s_pts[j + 1]
            left = sing if j == 0 else 0.0
            right = H - 0.5 if j == i - 1 else 0.0
            if left < 0 or right < 0:
                nodes, weights = _cell_rule(a, b, left, right)
            else:
                nodes, weights = a + (b - a) * x, (b - a) * w
            tt.append(np.full(nodes.size, t_pts[i]))
            uu.append(nodes)
            ww.append(weights)
            rows.append(np.full(nodes.size, i - 1))
            cols.append(np.full(nodes.size, j))
    t_all, u_all = np.concatenate(tt), np.concatenate(uu)
    vals = kernel_KH(t_all, u_all, hp, consts, _CELL_SPEC) * np.concatenate(ww)
    M = np.zeros((n, n))
    np.add.at(M, (np.concatenate(rows), np.concatenate(cols)), vals)
    return M / grid.dt


def _volterra_paths(grid: TimeGrid, hp: HurstParam, z: np.ndarray) -> np.ndarray:
    M = volterra_matrix(grid.n_steps, grid.horizon, hp.h)
    db = z * math.sqrt(grid.dt)
    return np.concatenate([np.zeros((z.shape[0], 1)), _rowwise(db, M)], axis=1)


# ---------------------------------------------------------------------------
# public samplers


def _draws_per_path(method: Method, n: int) -> int:
    return 4 * n if method is Method.CIRCULANT else n


def _transform(method: Method, grid: TimeGrid, hp: HurstParam, z: np.ndarray):
    if method is Method.CHOLESKY:
        return _cholesky_paths(grid, hp, z), False
    if method is Method.CIRCULANT:
        return _circulant_paths(grid, hp, z)
    if method is Method.VOLTERRA:
        return _volterra_paths(grid, hp, z), False
    raise ValueError(f"not a sampling method: {method}")


def _provenance(method: Method, fell_back: bool) -> Provenance:
    if fell_back:
        return Provenance(Method.CHOLESKY, note="circulant-fallback")
    return Provenance(method)


def _sample(method: Method, grid: TimeGrid, h, rng: RngStream) -> FbmPath:
    hp = as_hurst(h)
    if method is Method.CIRCULANT and grid.n_steps < 2:
        raise ValueError("circulant embedding needs n_steps >= 2")
    z = rng.normal((1, _draws_per_path(method, grid.n_steps)))
    vals, fell_back = _transform(method, grid, hp, z)
    return FbmPath(grid, vals[0], hp, _provenance(method, fell_back), rng.seed, rng.stream_id)


def sample_cholesky(grid: TimeGrid, h, rng: RngStream) -> FbmPath:
    """Exact sampling via Cholesky factor of the fGn (increment) covariance."""
    return _sample(Method.CHOLESKY, grid, h, rng)


def sample_circulant(grid: TimeGrid, h, rng: RngStream) -> FbmPath:
    """Davies-Harte circulant embedding; falls back to Cholesky on a bad embedding."""
    return _sample(Method.CIRCULANT, grid, h, rng)


def sample_volterra(grid: TimeGrid, h, rng: RngStream) -> FbmPath:
    """B_{t_i} = sum_{j<i} Kbar(t_i, s_j) dB_j with cell-averaged kernel weights."""
    return _sample(Method.VOLTERRA, grid, h, rng)


def sample_ensemble(
    method: Method | str,
    grid: TimeGrid,
    h,
    seed: int,
    n_paths: int,
    first_stream: int = 0,
) -> FbmEnsemble:
    method = Method(method)
    hp = as_hurst(h)
    z = stream_normals(seed, first_stream, n_paths, _draws_per_path(method, grid.n_steps))
    vals, fell_back = _transform(method, grid, hp, z)
    return FbmEnsemble(
        grid, vals, hp, _provenance(method, fell_back), seed, first_stream, n_paths if fell_back else 0
    )


def rescale_selfsimilar(path, a: float, k: int):
    """t -> a^{kH} B(t) on the grid scaled by a^k; works on paths and ensembles."""
    if not 0 < a < 1:
        raise ValueError("rescaling factor must satisfy 0 < a < 1")
    if k <= 0 or int(k) != k:
        raise ValueError("k must be a positive integer")
    factor = a ** (k * path.h.h)
    prov = Provenance(Method.RESCALED, parent=path.provenance, note=f"a={a!r},k={int(k)}")
    return replace(path, grid=path.grid.scaled(a**k), values=path.values * factor, provenance=prov)


def estimate_hurst(path: FbmPath | np.ndarray, max_lag_power: int = 5) -> float:
    """H from the slope of log E|X_{i+L} - X_i|^2 against log L, L = 1, 2, ..., 2^max_lag_power."""
    x = np.asarray(getattr(path, "values", path), dtype=float)
    if x.size - 1 < 64:
        raise EstimationError("need at least 64 steps")
    lags = 2 ** np.arange(0, max_lag_power + 1)
    lags = lags[lags <= (x.size - 1) // 4]
    msq = np.array([np.mean((x[L:] - x[:-L]) ** 2) for L in lags])
    if np.any(msq <= 0) or not np.all(np.isfinite(msq)):
        raise EstimationError("degenerate (constant) path")
    slope = np.polyfit(np.log(lags), np.log(msq), 1)[0]
    est = 0.5 * slope
    if not 0.0 < est < 1.0 - 1e-9:
        raise EstimationError(f"estimated H = {est:.6f} lies outside (0, 1)")
    return float(est)


@dataclass(frozen=True)
class CovarianceReport:
    """Entry-wise comparison of an ensemble covariance with R_H on grid points t_1..t_n.

    ``ratio`` is |empirical - R_H| / (z * SE + slack * |R_H|); the suite passes
    when its maximum is <= 1.
    """

    times: np.ndarray
    empirical: np.ndarray
    target: np.ndarray
    se: np.ndarray
    ratio: np.ndarray
    z: float
    slack: float

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratio))

    @property
    def passed(self) -> bool:
        return self.max_ratio <= 1.0


def covariance_check(values, times, h, z: float = 4.0, slack: float = 0.0) -> CovarianceReport:
    """Covariance suite for an ensemble ``values`` of shape (P, n+1) observed at ``times``.

    B_0 = 0 is excluded; the SE of each entry is that of the mean of products.
    """
    values = np.asarray(getattr(values, "values", values), dtype=float)
    times = np.asarray(times, dtype=float)
    X = values[:, 1:]
    P, n = X.shape
    if P < 2:
        raise EstimationError("need at least two paths")
    emp = X.T @ X / P
    sq = (X**2).T @ (X**2) / P
    se = np.sqrt(np.maximum(sq - emp**2, 0.0) / (P - 1))
    t = times[1:]
    target = covariance_RH(t[:, None], t[None, :], h)
    ratio = np.abs(emp - target) / (z * se + slack * np.abs(target))
    return CovarianceReport(t, emp, target, se, ratio, z, slack)
