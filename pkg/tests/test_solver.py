import numpy as np
import pytest
from scipy.linalg import expm

from fbmweak.errors import ConvergenceError, DimensionError
from fbmweak.hilbert import OperatorValuedFn, SpectralOperatorQ, sample_hilbert_fbm
from fbmweak.kernel import TimeGrid
from fbmweak.rng import RngStream
from fbmweak.solver import (
    DriftFn,
    PathProcess,
    ScalingParams,
    SmoothingFamily,
    WeakSolver,
    euler_refinement,
    jacobian_action,
    jacobian_fd_error,
    linear_flow_sup,
    picard_solve,
    rescale_to_solution,
    residual_Fn,
    sensitivity_x0,
    smallest_even_k,
    subsample_noise,
    validate_hypotheses,
    weak_solution_residual,
)

H = 0.7
PARAMS = ScalingParams(0.5, 2, H)


def nonlinear_drift(N):
    return DriftFn(
        lambda t, x: -x + 0.3 * np.sin(x) * (1 + t),
        N,
        lambda t, x: 0.3 * np.sin(x) + 0 * t,
        lambda t, x, v: -v + 0.3 * np.cos(x) * (1 + t) * v,
        lambda t: np.full(np.shape(t), 2.0),
    )


def cubic_drift():
    return DriftFn(lambda t, x: x**3, 1, lambda t, x: 0 * x, lambda t, x, v: 3 * x**2 * v, lambda t: np.ones_like(t))


def noise_for(N, n=32, seed=0, h=H):
    q = SpectralOperatorQ.power_decay(2.0, N) if N > 1 else SpectralOperatorQ(np.ones(1))
    return sample_hilbert_fbm(q, h, TimeGrid(1.0, n), RngStream(seed))


def test_smoothing_taper_and_inverse():
    S = SmoothingFamily.spectral_taper(10, 4)
    assert np.allclose(S.taper, 1 - np.arange(1, 5) / 11)
    assert np.isclose(S.operator_norm_defect, 4 / 11)
    y = np.random.default_rng(0).standard_normal((4, 7))
    assert np.allclose(S.apply(S.solve(y)), y)


def test_smoothing_inverse_needs_small_defect():
    with pytest.raises(ConvergenceError):
        SmoothingFamily.spectral_taper(3, 8).solve(np.ones((8, 2)))


def test_scaling_params():
    assert smallest_even_k(0.7) == 2 and smallest_even_k(0.3) == 4 and smallest_even_k(0.5) == 4
    with pytest.raises(ValueError):
        ScalingParams(0.5, 3, 0.7)
    with pytest.raises(ValueError):
        ScalingParams(0.5, 2, 0.4)
    with pytest.raises(ValueError):
        ScalingParams(1.0, 2, 0.7)
    assert ScalingParams.auto(0.3).k == 4


def test_path_process_validation():
    grid = TimeGrid(1.0, 4)
    with pytest.raises(ValueError):
        PathProcess(grid, np.ones((2, 5)), np.zeros(2))
    with pytest.raises(DimensionError):
        PathProcess(grid, np.zeros((2, 4)), np.zeros(2))


def test_shape_mismatch_rejected():
    noise = noise_for(3)
    with pytest.raises(DimensionError):
        picard_solve(PARAMS, np.ones(2), DriftFn.linear(-np.eye(2), 2.0), OperatorValuedFn.identity(2), noise, SmoothingFamily.identity(2))


@pytest.mark.parametrize("N", [1, 4])
def test_picard_residual_and_weak_substitution(N):
    noise = noise_for(N)
    drift, g = DriftFn.linear(-np.eye(N), 2.0), OperatorValuedFn.identity(N)
    S = SmoothingFamily.spectral_taper(8 * N, N)
    X = picard_solve(PARAMS, np.ones(N), drift, g, noise, S, tol=1e-10)
    F = residual_Fn(X, PARAMS, np.ones(N), drift, g, noise, S)
    assert np.max(np.linalg.norm(F.coefficients, axis=0)) <= 1e-10
    sol, tilde = rescale_to_solution(X, PARAMS, noise, S)
    assert np.isclose(sol.grid.horizon, 0.25)
    assert np.max(weak_solution_residual(sol, drift, g, tilde)) <= 1e-9


def test_newton_agrees_with_picard():
    N = 3
    noise = noise_for(N, seed=4)
    drift, g = nonlinear_drift(N), OperatorValuedFn.diag_time(N)
    S = SmoothingFamily.spectral_taper(24, N)
    a = picard_solve(PARAMS, np.ones(N), drift, g, noise, S, tol=1e-11)
    b = picard_solve(PARAMS, np.ones(N), drift, g, noise, S, tol=1e-11, method="newton")
    assert np.allclose(a.coefficients, b.coefficients, atol=1e-9)
    assert b.info["iterations"] < a.info["iterations"]


def test_noise_free_linear_flow_is_matrix_exponential():
    N = 3
    A = np.array([[-1.0, 0.5, 0.0], [-0.5, -1.0, 0.0], [0.0, 0.0, -2.0]])
    noise = noise_for(N, n=128)
    zero = OperatorValuedFn.zero(N)
    x0 = np.array([1.0, -0.5, 2.0])
    solver = WeakSolver(DriftFn.linear(A, 3.0), zero, noise, SmoothingFamily.spectral_taper(24, N), PARAMS, 1e-12)
    sol, _ = solver.solve(x0)
    exact = np.stack([expm(A * t) @ x0 for t in sol.grid.points], axis=1)
    # trapezoid rule: second order in the step
    assert np.max(np.abs(sol.states - exact)) < 1e-5


def test_euler_gap_shrinks_under_refinement():
    N = 4
    fine = noise_for(N, n=128, seed=7)
    study = euler_refinement(DriftFn.linear(-np.eye(N), 2.0), OperatorValuedFn.identity(N), fine, PARAMS, np.ones(N))
    assert all(r >= 1.2 for r in study.ratios)
    assert max(study.weak_residuals) <= 1e-7


def test_subsample_requires_divisor():
    with pytest.raises(DimensionError):
        subsample_noise(noise_for(2, n=32), 12)


@pytest.mark.parametrize("g", [OperatorValuedFn.identity(4), OperatorValuedFn.diag_time(4)])
def test_jacobian_matches_finite_differences(g):
    N = 4
    noise = noise_for(N, seed=3)
    drift = nonlinear_drift(N)
    S = SmoothingFamily.spectral_taper(40, N)
    X = picard_solve(PARAMS, np.ones(N), drift, g, noise, S)
    errs = [jacobian_fd_error(X, PARAMS, np.ones(N), drift, g, noise, S, RngStream(5), d) for d in (1e-3, 1e-4)]
    assert errs[1] <= 1e-4
    # central differences converge at second order
    assert errs[1] < errs[0] / 50


def test_jacobian_at_zero_scale_parameter():
    N = 2
    noise = noise_for(N)
    drift, g = nonlinear_drift(N), OperatorValuedFn.diag_time(N)
    S = SmoothingFamily.spectral_taper(16, N)
    X = picard_solve(PARAMS, np.ones(N), drift, g, noise, S)
    params = ScalingParams(0.5, 2, H)
    # a = 0 is the base point of the implicit-function argument; the b-derivative must stay finite there
    J = jacobian_action(X, (np.zeros_like(X.coefficients), 1.0, np.zeros(N)), params, np.ones(N), drift, S, 0.0, g, noise)
    assert np.all(np.isfinite(J.coefficients))


def test_divergent_drift_reports_failure():
    noise = noise_for(1)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(ConvergenceError):
            picard_solve(ScalingParams(0.5, 2, H), np.array([2.0]), cubic_drift(), OperatorValuedFn.identity(1), noise, SmoothingFamily.identity(1))
    # a shorter horizon (0.09 < blow-up time 1/8) converges
    X = picard_solve(ScalingParams(0.3, 2, H), np.array([2.0]), cubic_drift(), OperatorValuedFn.identity(1), noise, SmoothingFamily.identity(1))
    assert X.info["residual"] <= 1e-8


def test_sensitivity_is_stable_across_delta():
    N = 3
    noise = noise_for(N, seed=2)
    solver = WeakSolver(nonlinear_drift(N), OperatorValuedFn.identity(N), noise, SmoothingFamily.spectral_taper(24, N), PARAMS, 1e-12)
    s1, s2 = sensitivity_x0(solver, np.ones(N), 1e-2), sensitivity_x0(solver, np.ones(N), 1e-3)
    assert np.isfinite(s1) and abs(s1 - s2) / s2 < 1e-2


def test_linear_sensitivity_matches_flow():
    N = 2
    A = -np.eye(N)
    noise = noise_for(N, n=64)
    solver = WeakSolver(DriftFn.linear(A, 2.0), OperatorValuedFn.identity(N), noise, SmoothingFamily.spectral_taper(16, N), PARAMS, 1e-12)
    # the x0-derivative of a linear flow is exp(A t), whose sup over [0, 0.25] is 1
    assert np.isclose(sensitivity_x0(solver, np.ones(N), 1e-3), linear_flow_sup(A, 0.25), rtol=1e-6)


def test_hypotheses_linear_and_quadratic():
    rng = RngStream(0)
    ident = OperatorValuedFn.identity(1)
    ok = validate_hypotheses(DriftFn.linear(-np.eye(1), 2.0), ident, 200, rng)
    assert ok.passed
    quad = DriftFn(lambda t, x: x**2, 1, lambda t, x: 0 * x, lambda t, x, v: 2 * x * v, lambda t: np.full(np.shape(t), 2.0))
    bad = validate_hypotheses(quad, ident, 200, rng)
    assert not bad.passed and bad.ratios["drift_growth"] > 1 and bad.worst_magnitude["drift_growth"] == 100.0
    assert "pass=False" in str(bad)


def test_hypotheses_noise_bound_needs_phi_at_least_one():
    ident = OperatorValuedFn.identity(2)
    small = DriftFn.linear(-0.1 * np.eye(2), 0.5)
    assert not validate_hypotheses(small, ident, 200, RngStream(1)).passed
    with pytest.raises(ValueError):
        validate_hypotheses(small, ident, 10, RngStream(1))
