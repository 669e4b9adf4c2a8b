import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frkrem.antenna import AntennaSpec
from frkrem.core import (BasisSet, Measurements, ModelParams, TrendSpec,
                         apply_sigma_inverse, basis_matrix, bisquare_eval,
                         build_basis_set, build_design_matrices, covariance_K,
                         grid_centers, log_likelihood, ols, trend_vector)
from frkrem.errors import (DegenerateDesignError, EmptyBasisError,
                           InvalidParameterError, SingularMatrixError)

from helpers import dense_loglik, dense_sigma, random_instance, rel_err


# --------------------------------------------------------------------------
# bi-square basis
# --------------------------------------------------------------------------

def test_bisquare_at_center_is_one():
    assert bisquare_eval((3.0, 4.0), (3.0, 4.0), 17.0) == 1.0


def test_bisquare_at_support_edge_is_zero():
    assert bisquare_eval((10.0, 0.0), (0.0, 0.0), 10.0) == 0.0


def test_bisquare_half_radius():
    assert bisquare_eval((0.0, 5.0), (0.0, 0.0), 10.0) == pytest.approx(0.5625, abs=1e-15)


def test_bisquare_rejects_bad_tau():
    with pytest.raises(InvalidParameterError):
        bisquare_eval((0, 0), (0, 0), 0.0)
    with pytest.raises(InvalidParameterError):
        bisquare_eval((0, 0), (0, 0), -1.0)


@given(st.floats(-500, 500), st.floats(-500, 500), st.floats(1.0, 300.0))
def test_bisquare_in_unit_interval(x, y, tau):
    v = bisquare_eval((x, y), (0.0, 0.0), tau)
    assert 0.0 <= v <= 1.0


# --------------------------------------------------------------------------
# basis placement
# --------------------------------------------------------------------------

@pytest.mark.parametrize("tau,count", [(30, 1089), (40, 625), (50, 400), (60, 289),
                                       (80, 169), (100, 100), (120, 64)])
def test_grid_counts_on_a_km_square(tau, count):
    # basis sizes used for the 1 km x 1 km simulated area
    assert grid_centers((0, 0, 1000, 1000), tau).shape[0] == count


def test_dense_obs_keep_every_center():
    rng = np.random.default_rng(0)
    xy = rng.uniform(0, 1000, (20000, 2))
    basis = build_basis_set((0, 0, 1000, 1000), 100.0, xy)
    assert basis.r == basis.r_max == 100


def test_sparse_road_obs_prune_centers():
    # measurements along two roads only
    t = np.linspace(0, 5000, 2000)
    xy = np.vstack([np.column_stack([t, 0.4 * t + 300]),
                    np.column_stack([t, np.full_like(t, 4000.0)])])
    basis = build_basis_set((0, 0, 5000, 5000), 250.0, xy)
    assert basis.r < basis.r_max
    S = basis_matrix(xy, basis)
    assert np.all(S.max(axis=0) > 0)


def test_single_observation_at_a_center_keeps_one():
    centers = grid_centers((0, 0, 1000, 1000), 100.0)
    basis = build_basis_set((0, 0, 1000, 1000), 100.0, centers[37:38])
    assert basis.r == 1
    np.testing.assert_array_equal(basis.centers[0], centers[37])


def test_no_observation_near_any_center():
    with pytest.raises(EmptyBasisError):
        build_basis_set((0, 0, 100, 100), 10.0, np.array([[5000.0, 5000.0]]))


# --------------------------------------------------------------------------
# trend
# --------------------------------------------------------------------------

def test_trend_at_one_metre():
    np.testing.assert_array_equal(trend_vector((1.0, 0.0), TrendSpec((0, 0))), [1.0, 0.0])


def test_trend_at_100_metres():
    np.testing.assert_allclose(trend_vector((0.0, 100.0), TrendSpec((0, 0))), [1.0, -20.0],
                               atol=1e-12)


def test_trend_with_gain_on_boresight():
    spec = TrendSpec((0, 0), AntennaSpec((0, 0), azimuth=0.0))
    np.testing.assert_allclose(trend_vector((0.0, 100.0), spec), [1.0, -20.0, 0.0], atol=1e-12)


def test_distance_floor():
    spec = TrendSpec((0, 0), min_dist=1.0)
    np.testing.assert_array_equal(trend_vector((0.0, 0.0), spec), [1.0, 0.0])
    with pytest.raises(InvalidParameterError):
        TrendSpec((0, 0), min_dist=0.0)


# --------------------------------------------------------------------------
# design matrices
# --------------------------------------------------------------------------

def test_design_trend_column():
    obs = Measurements([[1, 0], [10, 0], [100, 0]], [0, 0, 0])
    basis = BasisSet([[0.0, 0.0]], 5.0)
    dm = build_design_matrices(obs, basis, TrendSpec((0, 0)))
    np.testing.assert_allclose(dm.T[:, 1], [0.0, -10.0, -20.0], atol=1e-12)


def test_design_unit_row_at_isolated_center():
    basis = BasisSet([[0, 0], [500, 0], [0, 500]], 50.0)
    obs = Measurements([[500, 0], [3, 4], [0, 480], [250, 250]], np.zeros(4))
    dm = build_design_matrices(obs, basis, TrendSpec((1000, 1000)))
    np.testing.assert_array_equal(dm.S[0], [0.0, 1.0, 0.0])


def test_design_matches_elementwise_bisquare():
    rng = np.random.default_rng(3)
    xy = rng.uniform(0, 200, (50, 2))
    basis = BasisSet(rng.uniform(0, 200, (7, 2)), 60.0)
    dm = build_design_matrices(Measurements(xy, np.zeros(50)), basis, TrendSpec((-10, -10)))
    oracle = np.array([[bisquare_eval(x, c, 60.0) for c in basis.centers] for x in xy])
    np.testing.assert_allclose(dm.S, oracle, rtol=0, atol=1e-14)


def test_equidistant_observations_are_degenerate():
    ang = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    xy = 100.0 * np.column_stack([np.cos(ang), np.sin(ang)])
    obs = Measurements(xy, np.zeros(12))
    with pytest.raises(DegenerateDesignError):
        build_design_matrices(obs, BasisSet([[0, 0]], 200.0), TrendSpec((0, 0)))


def test_too_few_observations():
    obs = Measurements([[1, 0], [10, 0]], [0, 0])
    with pytest.raises(DegenerateDesignError):
        build_design_matrices(obs, BasisSet([[0, 0]], 5.0), TrendSpec((0, 0)))


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(1)
    T = np.column_stack([np.ones(30), rng.normal(size=30)])
    y = rng.normal(size=30)
    np.testing.assert_allclose(ols(T, y), np.linalg.solve(T.T @ T, T.T @ y), rtol=1e-12)


# --------------------------------------------------------------------------
# covariance of eta
# --------------------------------------------------------------------------

def test_K_diagonal_is_inverse_beta():
    basis = BasisSet([[0, 0], [30, 40], [100, 0]], 50.0)
    K = covariance_K(basis, 4.0, 1.0)
    np.testing.assert_allclose(np.diag(K), 0.25, rtol=0, atol=0)


def test_K_at_one_range():
    phi = 2.0
    basis = BasisSet([[0, 0], [np.exp(phi), 0]], 50.0)
    K = covariance_K(basis, 2.0, phi)
    assert K[0, 1] == pytest.approx(np.exp(-1.0) / 2.0, rel=1e-14)


def test_K_random_centers_positive_definite():
    rng = np.random.default_rng(5)
    basis = BasisSet(rng.uniform(0, 100, (5, 2)), 50.0)
    K = covariance_K(basis, 0.7, 3.0)
    np.linalg.cholesky(K)
    assert np.linalg.eigvalsh(K).min() > 0
    np.testing.assert_array_equal(K, K.T)


def test_K_duplicate_centers():
    basis = BasisSet([[0, 0], [1, 1], [0, 0]], 5.0)
    with pytest.raises(SingularMatrixError):
        covariance_K(basis, 1.0, 0.0)


def test_K_rejects_bad_beta():
    with pytest.raises(InvalidParameterError):
        covariance_K(BasisSet([[0, 0]], 5.0), 0.0, 0.0)


# --------------------------------------------------------------------------
# Sigma^-1 and the log-likelihood
# --------------------------------------------------------------------------

def test_sigma_inverse_without_basis_support():
    obs = Measurements([[0, 0], [1, 5], [7, 2], [3, 3]], [1.0, 2.0, 3.0, 4.0])
    basis = BasisSet([[1000, 1000]], 10.0)
    dm = build_design_matrices(obs, basis, TrendSpec((50, 50)))
    assert not dm.S.any()
    params = ModelParams([0.0, 1.0], 2.5, 1.0, 1.0)
    v = np.array([1.0, -2.0, 0.5, 3.0])
    np.testing.assert_allclose(apply_sigma_inverse(v, dm, params), v / 2.5, rtol=1e-15)


def test_sigma_inverse_matches_dense():
    obs, basis, trend, params, dm = random_instance(np.random.default_rng(7), n=30, r=4)
    v = np.random.default_rng(8).normal(size=30)
    dense = np.linalg.solve(dense_sigma(dm, params), v)
    assert rel_err(apply_sigma_inverse(v, dm, params), dense) < 1e-10


def test_sigma_inverse_of_zero():
    obs, basis, trend, params, dm = random_instance(np.random.default_rng(9), n=20, r=3)
    np.testing.assert_array_equal(apply_sigma_inverse(np.zeros(20), dm, params), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(5, 200), st.integers(1, 20))
def test_sigma_inverse_round_trip(seed, n, r):
    rng = np.random.default_rng(seed)
    obs, basis, trend, params, dm = random_instance(rng, n=max(n, 5), r=r)
    v = rng.normal(size=dm.n)
    back = apply_sigma_inverse(dense_sigma(dm, params) @ v, dm, params)
    assert rel_err(back, v) < 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(5, 200), st.integers(1, 20))
def test_loglik_matches_dense(seed, n, r):
    rng = np.random.default_rng(seed)
    obs, basis, trend, params, dm = random_instance(rng, n=n, r=r)
    assert rel_err(log_likelihood(obs.value, dm, params), dense_loglik(obs.value, dm, params)) < 1e-8


def test_loglik_small_instance():
    obs, basis, trend, params, dm = random_instance(np.random.default_rng(11), n=25, r=3)
    assert rel_err(log_likelihood(obs.value, dm, params), dense_loglik(obs.value, dm, params)) < 1e-8


def test_loglik_without_basis_is_iid_gaussian():
    rng = np.random.default_rng(2)
    xy = rng.uniform(0, 100, (40, 2))
    y = rng.normal(-70, 3, 40)
    obs = Measurements(xy, y)
    dm = build_design_matrices(obs, BasisSet([[1e5, 1e5]], 10.0), TrendSpec((-50, 0)))
    alpha = ols(dm.T, y)
    params = ModelParams(alpha, 7.0, 1.0, 1.0)
    e = y - dm.T @ alpha
    iid = float(np.sum(-0.5 * np.log(2 * np.pi * 7.0) - 0.5 * e * e / 7.0))
    assert log_likelihood(y, dm, params) == pytest.approx(iid, rel=1e-12)


def test_loglik_at_zero_residual():
    obs, basis, trend, params, dm = random_instance(np.random.default_rng(4), n=20, r=3)
    y = dm.T @ params.alpha
    _, logdet = np.linalg.slogdet(dense_sigma(dm, params))
    want = -0.5 * logdet - 0.5 * dm.n * np.log(2 * np.pi)
    assert log_likelihood(y, dm, params) == pytest.approx(want, rel=1e-10)


def test_S_entries_and_columns():
    rng = np.random.default_rng(6)
    xy = rng.uniform(0, 1000, (3000, 2))
    basis = build_basis_set((0, 0, 1000, 1000), 80.0, xy)
    S = basis_matrix(xy, basis)
    assert S.min() >= 0.0 and S.max() <= 1.0
    assert np.all(np.count_nonzero(S, axis=0) >= 1)
    assert np.count_nonzero(S) / S.size < 0.05


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        ModelParams([0, 1], 0.0, 1.0, 0.0)
    with pytest.raises(InvalidParameterError):
        ModelParams([0, 1], 1.0, -1.0, 0.0)


def test_measurements_reject_nan():
    with pytest.raises(InvalidParameterError):
        Measurements([[0, 0]], [np.nan])
