import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import dblquad, quad
from scipy.special import beta

from fbmweak.errors import DomainError, RegimeError
from fbmweak.kernel import (
    BetaConvention,
    HurstParam,
    Regime,
    ScalarFn,
    TimeGrid,
    covariance_matrix,
    covariance_RH,
    factorization_check,
    inner_product_H,
    kernel_constants,
    kernel_dt,
    kernel_KH,
    khstar_apply,
)


def kernel_oracle(t, s, H):
    """Volterra kernel from the textbook formulas, integrated with QUADPACK's algebraic weights."""
    if H > 0.5:
        c = math.sqrt(H * (2 * H - 1) / beta(2 - 2 * H, H - 0.5))
        val, _ = quad(lambda u: u ** (H - 0.5), s, t, weight="alg", wvar=(H - 1.5, 0.0), epsabs=1e-14, epsrel=1e-13)
        return c * s ** (0.5 - H) * val
    c = math.sqrt(2 * H / ((1 - 2 * H) * beta(1 - 2 * H, H + 0.5)))
    val, _ = quad(lambda u: u ** (H - 1.5), s, t, weight="alg", wvar=(H - 0.5, 0.0), epsabs=1e-14, epsrel=1e-13)
    return c * ((t / s) ** (H - 0.5) * (t - s) ** (H - 0.5) - (H - 0.5) * s ** (0.5 - H) * val)


def smooth_norm_oracle(f, df, H, T=1.0):
    """Var(int_0^T f dB^H) = Var(f(T) B_T - int_0^T f'(s) B_s ds) from the covariance alone."""
    R = lambda t, s: covariance_RH(t, s, H)
    cross, _ = quad(lambda s: df(s) * R(T, s), 0.0, T, epsabs=1e-13)
    # symmetric integrand: twice the triangle u < s keeps the |s - u| kink on the boundary
    double, _ = dblquad(lambda u, s: df(s) * df(u) * R(s, u), 0.0, T, 0.0, lambda s: s, epsabs=1e-12)
    double *= 2.0
    return f(T) ** 2 * R(T, T) - 2 * f(T) * cross + double


def test_hurst_param_domain():
    for bad in (0.0, 1.0, -0.2, 1.3, float("nan")):
        with pytest.raises(DomainError):
            HurstParam(bad)
    assert HurstParam(0.3).regime is Regime.ROUGH
    assert HurstParam(0.5).regime is Regime.STANDARD
    assert HurstParam(0.8).regime is Regime.SMOOTH


def test_covariance_brownian_is_min():
    t = np.linspace(0.01, 2, 9)
    assert np.allclose(covariance_RH(t[:, None], t[None, :], 0.5), np.minimum(t[:, None], t[None, :]))


@given(h=st.floats(0.05, 0.95), pts=st.lists(st.floats(0.01, 3.0), min_size=2, max_size=8, unique=True))
def test_covariance_symmetric_psd(h, pts):
    C = covariance_matrix(np.array(pts), h)
    assert np.allclose(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-10 * np.abs(C).max()


def test_constants_undefined_at_half():
    with pytest.raises(RegimeError):
        kernel_constants(0.5)


@pytest.mark.parametrize(
    "t,s,h",
    [(1.0, 0.5, 0.75), (1.0, 0.5, 0.3), (0.7, 0.1, 0.6), (2.0, 1.9, 0.2), (1.0, 0.01, 0.9), (1.0, 0.999, 0.35)],
)
def test_kernel_matches_quadpack_oracle(t, s, h):
    assert np.isclose(kernel_KH(t, s, h), kernel_oracle(t, s, h), rtol=1e-8)


def test_kernel_pinned_values():
    # frozen from the QUADPACK oracle above
    assert np.isclose(kernel_KH(1.0, 0.5, 0.75), 0.9375919637, rtol=1e-9)
    assert np.isclose(kernel_KH(1.0, 0.5, 0.3), 0.8730141143, rtol=1e-9)


def test_kernel_is_one_for_brownian_motion():
    assert np.allclose(kernel_KH(np.array([1.0, 0.4]), np.array([0.2, 0.3]), 0.5), 1.0)


def test_kernel_domain():
    with pytest.raises(DomainError):
        kernel_KH(0.5, 0.5, 0.7)
    with pytest.raises(DomainError):
        kernel_KH(0.5, 0.0, 0.7)


@pytest.mark.parametrize("h", [0.2, 0.4, 0.6, 0.85])
def test_kernel_time_derivative(h):
    t, s, d = 0.8, 0.3, 1e-5
    fd = (kernel_KH(t + d, s, h) - kernel_KH(t - d, s, h)) / (2 * d)
    assert np.isclose(kernel_dt(t, s, h), fd, rtol=1e-6)


@given(h=st.sampled_from([0.25, 0.7]), s=st.floats(0.05, 0.95), t=st.floats(0.05, 0.95))
def test_factorization_reproduces_covariance(h, s, t):
    if abs(s - t) < 1e-3:
        t = s + 0.01
    assert factorization_check(t, s, h) <= 1e-6


@pytest.mark.parametrize("h", [0.3, 0.7])
def test_reciprocal_beta_convention_fails_factorization(h):
    assert factorization_check(0.9, 0.4, h, BetaConvention.RECIPROCAL) > 0.5


@pytest.mark.parametrize("h", [0.3, 0.5, 0.7])
def test_inner_product_of_constants(h):
    assert np.isclose(inner_product_H(ScalarFn.constant(1.0), ScalarFn.constant(1.0), h, 2.0), 2.0 ** (2 * h), rtol=1e-7)


@pytest.mark.parametrize("h", [0.3, 0.5, 0.7])
def test_inner_product_of_indicators(h):
    chi = ScalarFn.indicator(0.0, 0.5)
    assert np.isclose(inner_product_H(chi, chi, h, 1.0), 0.5 ** (2 * h), rtol=1e-7)
    # <chi_[0,a), chi_[0,b)> = R_H(a, b)
    chi2 = ScalarFn.indicator(0.0, 0.8)
    assert np.isclose(inner_product_H(chi, chi2, h, 1.0), covariance_RH(0.5, 0.8, h), rtol=1e-7)


@pytest.mark.parametrize("h", [0.3, 0.7])
def test_inner_product_of_identity_function(h):
    oracle = smooth_norm_oracle(lambda t: t, lambda t: 1.0, h)
    assert np.isclose(oracle, 1.0 / (2 * h + 2), rtol=1e-8)
    assert np.isclose(inner_product_H(ScalarFn.linear(), ScalarFn.linear(), h, 1.0), oracle, rtol=1e-7)


@pytest.mark.parametrize("h", [0.3, 0.7])
def test_inner_product_of_ramp(h):
    f = lambda t: np.sin(np.pi * t / 2)
    df = lambda t: np.pi / 2 * np.cos(np.pi * t / 2)
    val = inner_product_H(ScalarFn(f), ScalarFn(f), h, 1.0)
    assert np.isclose(val, smooth_norm_oracle(f, df, h), rtol=1e-6)


@pytest.mark.parametrize("s", [0.1, 0.3, 0.45])
def test_khstar_of_indicator_is_kernel(s):
    h = 0.3
    val = khstar_apply(ScalarFn.indicator(0.0, 0.5), s, h, TimeGrid(1.0, 8))
    assert np.isclose(val, kernel_KH(0.5, s, h), rtol=1e-7)


def test_khstar_requires_rough_regime():
    with pytest.raises(RegimeError):
        khstar_apply(ScalarFn.constant(1.0), 0.5, 0.7, 1.0)


def test_time_grid():
    g = TimeGrid(2.0, 8)
    assert g.points[-1] == 2.0 and np.isclose(g.dt, 0.25)
    assert g.index_of(0.5) == 2
    with pytest.raises(DomainError):
        g.index_of(0.3)
    assert g.scaled(0.25).horizon == 0.5
