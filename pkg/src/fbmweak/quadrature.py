"""Gauss-Legendre quadrature with endpoint-singularity substitution.

Integrands of the form (u - a)^alpha * smooth(u) with alpha in (-1, 0) are
handled by the change of variables u = a + (b - a) v^(1/(1+alpha)), which
turns the algebraic endpoint behaviour into a smooth function of v.  The
regularized integrand is then integrated with composite Gauss-Legendre and
adaptive bisection.

Integrands are vectorized: ``f(u)`` receives a 1-D array of nodes and returns
an array whose first axis runs over the nodes; any trailing axes are carried
through, so vector- and matrix-valued integrands work unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import QuadratureError


@dataclass(frozen=True)
class QuadratureSpec:
    order: int = 10
    tol: float = 1e-10
    max_levels: int = 20
    # achieved error above this raises instead of returning silently
    fail_tol: float = 1e-6


DEFAULT_SPEC = QuadratureSpec()


@lru_cache(maxsize=32)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _panel(f, a, b, order):
    x, w = gauss_legendre(order)
    vals = np.asarray(f(a + (b - a) * x), dtype=float)
    return (b - a) * np.tensordot(w, vals, axes=(0, 0))


def adaptive(f, a: float, b: float, spec: QuadratureSpec = DEFAULT_SPEC):
    """Adaptive bisection Gauss-Legendre integral of ``f`` over [a, b].

    A panel is accepted when its estimate and the sum of its two halves
    differ by less than ``spec.tol`` (absolute, scaled up for large values).
    Panels at depth ``spec.max_levels`` are accepted as is and their
    discrepancy is accumulated; if the total exceeds ``spec.fail_tol`` a
    :class:`QuadratureError` carrying the achieved error is raised.
    """
    if b == a:
        return 0.0 * np.asarray(f(np.array([a])), dtype=float)[0]
    total = 0.0
    unresolved = 0.0
    stack = [(a, b, _panel(f, a, b, spec.order), 0)]
    while stack:
        lo, hi, whole, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _panel(f, lo, mid, spec.order)
        right = _panel(f, mid, hi, spec.order)
        refined = left + right
        diff = float(np.max(np.abs(refined - whole)))
        scale = max(1.0, float(np.max(np.abs(refined))))
        if diff <= spec.tol * scale:
            total = total + refined
        elif depth + 1 >= spec.max_levels:
            total = total + refined
            unresolved += diff
        else:
            stack.append((lo, mid, left, depth + 1))
            stack.append((mid, hi, right, depth + 1))
    if unresolved > spec.fail_tol:
        raise QuadratureError(
            f"adaptive quadrature on [{a}, {b}] reached depth {spec.max_levels} "
            f"with error estimate {unresolved:.3e}",
            achieved=unresolved,
        )
    return total


def _exponent(alpha):
    # positive exponents are harmless; only singular ones get substituted
    return 1.0 / (1.0 + min(float(alpha), 0.0))


def integrate_singular(
    f,
    a: float,
    b: float,
    left: float = 0.0,
    right: float = 0.0,
    spec: QuadratureSpec = DEFAULT_SPEC,
    breakpoints=(),
):
    """Integrate ``f`` over [a, b] where f ~ (u-a)^left and f ~ (b-u)^right.

    Interior ``breakpoints`` (discontinuities of f) split the interval; the
    endpoint exponents apply to the outermost pieces only.
    """
    if not left > -1.0 or not right > -1.0:
        raise ValueError("endpoint exponents must exceed -1")
    if b <= a:
        if b == a:
            return 0.0 * np.asarray(f(np.array([a])), dtype=float)[0]
        raise ValueError("integration bounds must satisfy a <= b")
    cuts = sorted(c for c in set(breakpoints) if a < c < b)
    edges = [a, *cuts, b]
    total = 0.0
    for i in range(len(edges) - 1):
        lo, hi = edges[i], edges[i + 1]
        alo = left if i == 0 else 0.0
        ahi = right if i == len(edges) - 2 else 0.0
        total = total + _two_sided(f, lo, hi, alo, ahi, spec)
    return total


def _two_sided(f, a, b, left, right, spec):
    p = _exponent(left)
    q = _exponent(right)
    if p == 1.0 and q == 1.0:
        return adaptive(f, a, b, spec)
    m = 0.5 * (a + b)
    half = m - a

    def g_left(v):
        return _scaled(f, a + half * v**p, half * p * v ** (p - 1.0))

    def g_right(v):
        return _scaled(f, b - half * v**q, half * q * v ** (q - 1.0))

    return adaptive(g_left, 0.0, 1.0, spec) + adaptive(g_right, 0.0, 1.0, spec)


def _scaled(f, u, jac):
    vals = np.asarray(f(u), dtype=float)
    return vals * jac.reshape(jac.shape + (1,) * (vals.ndim - 1))


def composite(f, a: float, b: float, panels: int, order: int = 10):
    """Fixed composite Gauss-Legendre rule with ``panels`` equal panels."""
    x, w = gauss_legendre(order)
    edges = np.linspace(a, b, panels + 1)
    h = np.diff(edges)
    nodes = (edges[:-1, None] + h[:, None] * x[None, :]).ravel()
    weights = (h[:, None] * w[None, :]).ravel()
    vals = np.asarray(f(nodes), dtype=float)
    return np.tensordot(weights, vals, axes=(0, 0))
