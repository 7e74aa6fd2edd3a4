import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbmweak.errors import ConsistencyError
from fbmweak.hilbert import OperatorValuedFn, SpectralOperatorQ, second_moment_formula
from fbmweak.heat import (
    FourierState,
    HeatParams,
    assemble_drift,
    complex_mode,
    drift_matrix,
    noise_operator,
    physical_snapshot,
    solve_heat_ensemble,
    solve_heat_spde,
)
from fbmweak.kernel import TimeGrid
from fbmweak.rng import RngStream
from fbmweak.solver import ScalingParams, validate_hypotheses

SCALING = ScalingParams(0.5, 2, 0.7)


def single_mode(params, m, value):
    M = params.max_mode
    c = np.zeros(2 * M + 1, dtype=complex)
    c[M + m] = value
    c[M - m] = np.conj(value)
    return FourierState(c, params.L)


def test_trivial_drift_is_zero():
    assert np.array_equal(drift_matrix(HeatParams(0.0, 0.0, 0.0)), np.zeros((9, 9)))


def test_laplacian_symbol():
    p = HeatParams(1.0, 0.0, 0.0, L=2 * math.pi, n_modes=7)
    assert np.allclose(np.diag(drift_matrix(p)), [0, -1, -1, -4, -4, -9, -9])


def test_advection_rotates_each_pair():
    p = HeatParams(0.0, 0.0, 2.0, n_modes=5)
    A = drift_matrix(p)
    assert np.allclose(A, -A.T)
    assert np.isclose(A[1, 2], 2.0) and np.isclose(A[3, 4], 4.0)


def test_multiplier_block_norm_sets_phi():
    p = HeatParams()
    phi = assemble_drift(p).growth_phi(np.array([0.0]))[0]
    assert np.isclose(phi, max(1.0, np.max(np.abs(p.multiplier(np.arange(p.max_mode + 1))))))
    rep = validate_hypotheses(assemble_drift(p), OperatorValuedFn.identity(p.n_modes), 500, RngStream(0))
    assert rep.passed


def test_noise_operator_decay():
    q = noise_operator(HeatParams(L=2 * math.pi, n_modes=5), p=2.0)
    assert np.allclose(q.eigenvalues, [1, 0.5, 0.5, 0.2, 0.2])
    assert q.trace_tail_bound > 0


@given(coords=st.lists(st.floats(-5, 5), min_size=8, max_size=8))
def test_real_fourier_round_trip(coords):
    p = HeatParams(n_modes=8)
    state = FourierState.from_real(coords, p)
    state.check_symmetry()
    assert np.allclose(state.to_real(p), coords)


def test_symmetry_violation_raises():
    bad = FourierState(np.array([1.0, 0.0, 2.0j]))
    with pytest.raises(ConsistencyError):
        physical_snapshot(bad, 8)
    with pytest.raises(ConsistencyError):
        FourierState(np.ones(4))


def test_snapshot_of_cosine_and_zero():
    p = HeatParams(L=2 * math.pi, n_modes=5)
    u = physical_snapshot(single_mode(p, 2, 0.5), 16)
    x = 2 * math.pi * np.arange(16) / 16
    assert np.allclose(u, np.cos(2 * x), atol=1e-14)
    assert np.array_equal(physical_snapshot(single_mode(p, 1, 0.0), 16), np.zeros(16))


@given(seed=st.integers(0, 1000))
def test_parseval(seed):
    p = HeatParams(n_modes=9)
    coords = np.random.default_rng(seed).standard_normal(9)
    state = FourierState.from_real(coords, p)
    u = physical_snapshot(state, 24)
    assert abs(np.mean(u**2) - np.sum(np.abs(state.coefficients) ** 2)) <= 1e-10


def test_noise_off_modes_follow_exponentials():
    p = HeatParams()
    M = p.max_mode
    rng = np.random.default_rng(1)
    c = np.zeros(2 * M + 1, dtype=complex)
    c[M] = 0.3
    for m in range(1, M + 1):
        v = (rng.standard_normal() + 1j * rng.standard_normal()) / (1 + m**2)
        c[M + m], c[M - m] = v, np.conj(v)
    v0 = FourierState(c)
    sol, _ = solve_heat_spde(p, v0, 0.7, SpectralOperatorQ(np.zeros(p.n_modes)), SCALING, RngStream(0), TimeGrid(1.0, 128))
    t = sol.grid.points
    for m in range(M + 1):
        exact = v0.mode(m) * np.exp(p.multiplier(m) * t)
        assert np.max(np.abs(complex_mode(sol.states, m, p) - exact) / np.abs(exact)) <= 1e-4


def test_compensated_growth_freezes_mode_one():
    p = HeatParams(alpha=1.0, beta=1.0, gamma=0.0, n_modes=5)
    sol, _ = solve_heat_spde(p, single_mode(p, 1, 0.4), 0.7, SpectralOperatorQ(np.zeros(5)), SCALING, RngStream(0))
    assert np.allclose(complex_mode(sol.states, 1, p), 0.4, atol=1e-12)


def test_h2_requirement_and_truncation_checks():
    p = HeatParams(n_modes=5)
    wide = FourierState(np.zeros(9, dtype=complex))
    with pytest.raises(ConsistencyError):
        wide.to_real(p)
    with pytest.raises(ValueError):
        solve_heat_spde(p, single_mode(p, 1, 1.0), 0.7, SpectralOperatorQ(np.zeros(3)), SCALING, RngStream(0))


@pytest.fixture(scope="module")
def diffusive_ensemble():
    p = HeatParams(alpha=1.0, beta=0.0, gamma=0.0, n_modes=5)
    q = noise_operator(p)
    grid, states = solve_heat_ensemble(p, single_mode(p, 1, 0.5), 0.7, q, SCALING, 21, 3000, TimeGrid(1.0, 128))
    return p, q, grid, states


def test_mean_follows_deterministic_exponential(diffusive_ensemble):
    p, _, grid, states = diffusive_ensemble
    z = complex_mode(states, 1, p)[:, 1:]
    exact = 0.5 * np.exp(p.multiplier(1) * grid.points[1:])
    se = z.real.std(axis=0, ddof=1) / math.sqrt(z.shape[0])
    assert np.max(np.abs(z.real.mean(axis=0) - exact.real) / se) <= 4


def test_modes_decouple_without_advection(diffusive_ensemble):
    p, _, _, states = diffusive_ensemble
    end = states[:, :, -1]
    rho = np.corrcoef(end.T)
    off = rho[~np.eye(p.n_modes, dtype=bool)]
    assert np.max(np.abs(off)) <= 4 / math.sqrt(states.shape[0])


@pytest.mark.parametrize("coord", [1, 3])
def test_energy_balance(diffusive_ensemble, coord):
    p, q, grid, states = diffusive_ensemble
    mu = p.multiplier(p.mode_numbers[coord]).real
    t = grid.horizon
    g = OperatorValuedFn(lambda r: np.exp(mu * (t - r))[:, None, None], 1)
    var = second_moment_formula(g, SpectralOperatorQ(q.eigenvalues[coord : coord + 1]), 0.7, t)
    assert abs(states[:, coord, -1].var(ddof=1) / var - 1) <= 0.10
