"""Wiener integrals of deterministic functions against scalar fBm."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DomainError
from .kernel import ScalarFn, TimeGrid, as_hurst, inner_product_H
from .rng import RngStream
from .sampler import Method, sample_ensemble


@dataclass(frozen=True)
class SimpleFunction:
    """phi = sum_i levels[i] * chi_[breakpoints[i], breakpoints[i+1])."""

    breakpoints: tuple
    levels: tuple

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        if len(bp) != len(self.levels) + 1:
            raise ValueError("need one more breakpoint than levels")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "levels", tuple(float(a) for a in self.levels))

    @classmethod
    def on_grid(cls, grid: TimeGrid, values) -> "SimpleFunction":
        """Piecewise constant with value ``values[i]`` on [t_i, t_{i+1})."""
        return cls(tuple(grid.points), tuple(np.asarray(values, dtype=float)))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        bp = np.asarray(self.breakpoints)
        idx = np.searchsorted(bp, t, side="right") - 1
        inside = (idx >= 0) & (idx < len(self.levels))
        lv = np.asarray(self.levels)
        return np.where(inside, lv[np.clip(idx, 0, len(lv) - 1)], 0.0)

    def as_scalar_fn(self) -> ScalarFn:
        cuts = tuple(b for b in self.breakpoints if b > 0)
        return ScalarFn(self, "Simple", cuts)

    def __add__(self, other: "SimpleFunction") -> "SimpleFunction":
        bp = sorted(set(self.breakpoints) | set(other.breakpoints))
        mids = [(a + b) / 2 for a, b in zip(bp, bp[1:])]
        return SimpleFunction(tuple(bp), tuple(self(np.array(mids)) + other(np.array(mids))))

    def __mul__(self, c: float) -> "SimpleFunction":
        return SimpleFunction(self.breakpoints, tuple(c * a for a in self.levels))

    __rmul__ = __mul__


def _values(path):
    return np.asarray(path.values, dtype=float)


def integrate_simple(phi: SimpleFunction, path) -> float | np.ndarray:
    """sum_i a_i (B_{t_{i+1}} - B_{t_i}); ``path`` may be an FbmPath or an ensemble."""
    grid = path.grid
    try:
        idx = [grid.index_of(b) for b in phi.breakpoints]
    except DomainError as exc:
        raise AlignmentError(str(exc)) from exc
    vals = _values(path)
    inc = vals[..., idx[1:]] - vals[..., idx[:-1]]
    out = inc @ np.asarray(phi.levels)
    return float(out) if np.ndim(out) == 0 else out


def integrate_riemann(f, path) -> float | np.ndarray:
    """Left-endpoint sum  sum_i f(t_i) (B_{t_{i+1}} - B_{t_i})."""
    t = path.grid.points
    vals = _values(path)
    out = np.diff(vals, axis=-1) @ np.asarray(f(t[:-1]), dtype=float)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class IsometryResult:
    empirical: float
    target: float
    se: float
    defect: float

    @property
    def relative_se(self) -> float:
        return self.se / max(abs(self.target), 1e-12)


def isometry_test(
    f,
    g,
    h,
    n_paths: int,
    grid: TimeGrid,
    rng: RngStream,
    method: Method | str = Method.CHOLESKY,
    chunk: int = 20_000,
) -> IsometryResult:
    """Empirical E[(int f dB)(int g dB)] over a common ensemble versus <f, g>_H."""
    if n_paths < 1000:
        raise ValueError("isometry_test needs at least 1000 paths")
    hp = as_hurst(h)
    prods = []
    for lo in range(0, n_paths, chunk):
        ens = sample_ensemble(method, grid, hp, rng.seed, min(chunk, n_paths - lo), rng.stream_id + lo)
        prods.append(integrate_riemann(f, ens) * integrate_riemann(g, ens))
    prods = np.concatenate(prods)
    emp = float(prods.mean())
    se = float(prods.std(ddof=1) / np.sqrt(n_paths))
    target = inner_product_H(f, g, hp, grid)
    defect = abs(emp - target) / max(abs(target), 1e-12)
    return IsometryResult(emp, target, se, defect)


def isometry_defect(f, g, h, n_paths: int, grid: TimeGrid, rng: RngStream, method=Method.CHOLESKY) -> float:
    """|empirical E[(int f)(int g)] - <f,g>_H| / max(|<f,g>_H|, 1e-12)."""
    return isometry_test(f, g, h, n_paths, grid, rng, method).defect


def test_battery(horizon: float) -> dict[str, ScalarFn]:
    """Shipped integrands: 1, t, chi_[0, T/2) and the smooth ramp sin(pi t / 2T)."""
    return {
        "one": ScalarFn.constant(1.0),
        "t": ScalarFn.linear(),
        "chi_half": ScalarFn.indicator(0.0, horizon / 2),
        "ramp": ScalarFn(lambda t: np.sin(np.pi * np.asarray(t) / (2 * horizon)), "C1"),
    }


def isometry_battery(
    fns: dict,
    pairs,
    h,
    n_paths: int,
    grid: TimeGrid,
    rng: RngStream,
    method: Method | str = Method.CHOLESKY,
    chunk: int = 20_000,
) -> dict[tuple[str, str], IsometryResult]:
    """isometry_test for several (f, g) name pairs on one shared ensemble."""
    if n_paths < 1000:
        raise ValueError("isometry_battery needs at least 1000 paths")
    hp = as_hurst(h)
    names = sorted({n for pair in pairs for n in pair})
    cols = {n: [] for n in names}
    for lo in range(0, n_paths, chunk):
        ens = sample_ensemble(method, grid, hp, rng.seed, min(chunk, n_paths - lo), rng.stream_id + lo)
        for n in names:
            cols[n].append(integrate_riemann(fns[n], ens))
    ints = {n: np.concatenate(v) for n, v in cols.items()}
    out = {}
    for f, g in pairs:
        prods = ints[f] * ints[g]
        emp = float(prods.mean())
        se = float(prods.std(ddof=1) / np.sqrt(n_paths))
        target = inner_product_H(fns[f], fns[g], hp, grid)
        out[(f, g)] = IsometryResult(emp, target, se, abs(emp - target) / max(abs(target), 1e-12))
    return out
