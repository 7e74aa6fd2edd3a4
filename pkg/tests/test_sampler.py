import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from fbmweak.errors import EstimationError
from fbmweak.kernel import HurstParam, TimeGrid, covariance_matrix
from fbmweak.rng import RngStream, stream_normals
from fbmweak.sampler import (
    Method,
    _cholesky_paths,
    _circulant_paths,
    covariance_check,
    estimate_hurst,
    fgn_autocovariance,
    rescale_selfsimilar,
    sample_cholesky,
    sample_circulant,
    sample_ensemble,
    sample_volterra,
    volterra_matrix,
)


def test_fgn_autocovariance_at_half_is_white():
    assert np.allclose(fgn_autocovariance(np.arange(5), 0.5), [1, 0, 0, 0, 0])


@pytest.mark.parametrize("h", [0.1, 0.3, 0.5, 0.7, 0.95])
@pytest.mark.parametrize("paths", [_cholesky_paths, _circulant_paths])
def test_linear_sampling_maps_have_exact_covariance(h, paths):
    # both samplers are linear in the normals, so pushing the identity through gives the covariance factor
    grid = TimeGrid(2.0, 12)
    width = 4 * grid.n_steps if paths is _circulant_paths else grid.n_steps
    out = paths(grid, HurstParam(h), np.eye(width))
    A = out[0] if isinstance(out, tuple) else out
    assert np.allclose(A.T @ A, covariance_matrix(grid.points, h), atol=1e-12)


def test_volterra_matrix_is_brownian_at_half():
    assert np.array_equal(volterra_matrix(6, 1.0, 0.5), np.tril(np.ones((6, 6))))


@pytest.mark.parametrize("h", [0.3, 0.7])
def test_volterra_covariance_close_to_target(h):
    grid = TimeGrid(1.0, 32)
    M = volterra_matrix(grid.n_steps, grid.horizon, h)
    C = M @ M.T * grid.dt
    R = covariance_matrix(grid.points[1:], h)
    rel = np.abs(C - R) / R
    # discretization error of the cell-averaged kernel decays away from t_1
    assert rel.max() < 0.06
    assert rel[8:, 8:].max() < 0.02


@pytest.mark.parametrize("sampler", [sample_cholesky, sample_circulant, sample_volterra])
def test_paths_start_at_zero_and_are_reproducible(sampler, grid16):
    a = sampler(grid16, 0.4, RngStream(3, 5))
    b = sampler(grid16, 0.4, RngStream(3, 5))
    c = sampler(grid16, 0.4, RngStream(3, 6))
    assert a.values[0] == 0.0 and a.values.shape == (17,)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert (a.seed, a.stream_id) == (3, 5)


@pytest.mark.parametrize("method", ["cholesky", "circulant", "volterra"])
def test_ensemble_member_equals_single_stream_draw(method, grid16):
    ens = sample_ensemble(method, grid16, 0.65, 11, 6, first_stream=20)
    single = {"cholesky": sample_cholesky, "circulant": sample_circulant, "volterra": sample_volterra}[method]
    for i in (0, 3, 5):
        assert np.array_equal(ens.values[i], single(grid16, 0.65, RngStream(11, 20 + i)).values)
    assert ens.path(3).stream_id == 23


def test_stream_normals_are_independent_of_batch_split():
    whole = stream_normals(4, 0, 10, 7)
    parts = np.vstack([stream_normals(4, 0, 4, 7), stream_normals(4, 4, 6, 7)])
    assert np.array_equal(whole, parts)


def test_provenance_records_method():
    ens = sample_ensemble(Method.CIRCULANT, TimeGrid(1.0, 8), 0.3, 0, 4)
    assert ens.provenance.method is Method.CIRCULANT and ens.fallback_count == 0


@pytest.mark.parametrize("h", [0.3, 0.5, 0.7])
def test_covariance_suite_small(h, grid16):
    ens = sample_ensemble("cholesky", grid16, h, 1, 20_000)
    assert covariance_check(ens, grid16.points, h).passed


def test_rescaling_scales_grid_and_values(grid16):
    path = sample_cholesky(grid16, 0.7, RngStream(2))
    r = rescale_selfsimilar(path, 0.5, 2)
    assert np.isclose(r.grid.horizon, 0.25)
    assert np.allclose(r.values, path.values * 0.5 ** (2 * 0.7))
    assert r.provenance.parent == path.provenance
    assert "rescaled" in r.provenance.describe()


def test_rescaled_ensemble_is_fbm_at_shrunken_horizon():
    h = 0.7
    ens = sample_ensemble("cholesky", TimeGrid(1.0, 16), h, 8, 20_000)
    r = rescale_selfsimilar(ens, 0.5, 2)
    assert covariance_check(r, r.grid.points, h).passed
    terminal = r.values[:, -1] / r.grid.horizon**h
    assert stats.kstest(terminal, "norm").pvalue > 0.01


@pytest.mark.parametrize("a,k", [(1.0, 2), (0.0, 2), (0.5, 0), (0.5, 1.5)])
def test_rescaling_rejects_bad_parameters(a, k, grid16):
    path = sample_cholesky(grid16, 0.7, RngStream(2))
    with pytest.raises(ValueError):
        rescale_selfsimilar(path, a, k)


@pytest.mark.parametrize("h", [0.5, 0.75])
def test_hurst_estimate_recovers_parameter(h):
    ens = sample_ensemble("circulant", TimeGrid(1.0, 2048), h, 0, 40)
    est = np.array([estimate_hurst(ens.values[i]) for i in range(40)])
    assert abs(est.mean() - h) < 0.02


def test_hurst_estimate_rejects_degenerate_input():
    with pytest.raises(EstimationError):
        estimate_hurst(np.zeros(200))
    with pytest.raises(EstimationError):
        estimate_hurst(np.arange(10.0))


@given(seed=st.integers(0, 2**32 - 1), stream=st.integers(0, 10**6))
def test_streams_are_deterministic(seed, stream):
    assert np.array_equal(RngStream(seed, stream).normal(5), RngStream(seed, stream).normal(5))
