"""Kriging prediction of the denoised field Z from a fitted model.

Conditioning is done once per model: the posterior mean and covariance of eta,
``K S^T Sigma^-1 (Y - T a)`` and ``K - K S^T Sigma^-1 S K``, are cached on the
:class:`~frkrem.core.FittedModel`.  After that a prediction at ``x`` only needs
``t(x)`` and ``s(x)``, which has at most a handful of nonzeros.

Reported variances are those of Z and exclude the measurement noise sigma^2.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import _kernels
from .core import (FittedModel, Measurements, ModelParams, basis_matrix,
                   cho_inverse, cholesky, covariance_K, trend_matrix)
from .errors import InvalidParameterError, NumericalFailure

# default cap on the number of grid nodes predict_grid will evaluate
MAX_GRID_POINTS = 20_000_000
# negative variances down to this are rounding noise and clipped to zero
VAR_NEG_TOL = 1e-10


@dataclass
class Prediction:
    z_hat: float
    var: float


@dataclass
class Grid:
    """Row-major prediction grid: ``z_hat[j, i]`` sits at ``(xs[i], ys[j])``."""

    xs: np.ndarray
    ys: np.ndarray
    z_hat: np.ndarray
    var: np.ndarray
    cid_hat: np.ndarray = None

    @property
    def shape(self):
        return self.z_hat.shape

    def points(self):
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def __len__(self):
        return self.z_hat.size


def _sigma_solver(dm, sigma2, K):
    """``v -> Sigma^-1 v`` for ``Sigma = sigma2 I + S K S^T`` with a general K.

    Also returns the Cholesky factor of the inner matrix ``sigma2 K^-1 + S^T S``.
    """
    K_inv = cho_inverse(cholesky(K, "K"))
    inner = sigma2 * K_inv + dm.StS
    inner_cf = cholesky(0.5 * (inner + inner.T), "inner matrix sigma^2 K^-1 + S^T S")

    def solve(v):
        return (v - dm.S @ linalg.cho_solve(inner_cf, dm.S.T @ v)) / sigma2
    return solve, inner_cf


def condition_with_K(y, dm, sigma2, K, trend, alpha=None, params=None, method="em"):
    """Prediction caches for an arbitrary PD ``K``.

    With ``alpha=None`` the trend is the weighted least-squares estimate
    ``(T^T Sigma^-1 T)^-1 T^T Sigma^-1 Y``.
    """
    y = np.asarray(y, dtype=float)
    solve, inner_cf = _sigma_solver(dm, sigma2, K)
    if alpha is None:
        SiT = solve(dm.T)
        alpha = np.linalg.solve(dm.T.T @ SiT, SiT.T @ y)
    if params is None:
        params = ModelParams(alpha, sigma2, K.shape[0] / float(np.trace(K)), float("nan"))
    resid = y - dm.T @ alpha
    # K - K S^T Sigma^-1 S K == sigma2 (sigma2 K^-1 + S^T S)^-1, without the cancellation
    eta_mean = linalg.cho_solve(inner_cf, dm.S.T @ resid)
    eta_cov = sigma2 * cho_inverse(inner_cf)
    eta_cov = 0.5 * (eta_cov + eta_cov.T)
    return FittedModel(params=params, basis=dm.basis, trend=trend,
                       eta_mean=eta_mean, eta_cov=eta_cov, n_obs=dm.n,
                       method=method)


def condition(obs, dm, params, trend, method="em"):
    """Build the prediction caches for ``params`` given the data."""
    y = obs.value if isinstance(obs, Measurements) else np.asarray(obs, dtype=float)
    K = covariance_K(dm.basis, params.beta, params.phi)
    return condition_with_K(y, dm, params.sigma2, K, trend, params.alpha, params, method)


def prior_model(params, basis, trend):
    """Model with no data: eta keeps its prior N(0, K)."""
    K = covariance_K(basis, params.beta, params.phi)
    return FittedModel(params=params, basis=basis, trend=trend,
                       eta_mean=np.zeros(basis.r), eta_cov=K, n_obs=0,
                       method="prior")


def _as_points(loc):
    arr = np.asarray(loc, dtype=np.float64)
    return arr.reshape(-1, 2), arr.ndim == 1


def _check_var(var):
    low = var.min() if var.size else 0.0
    if low < -VAR_NEG_TOL:
        raise NumericalFailure(f"negative posterior variance {low:.3e}")
    return np.maximum(var, 0.0)


def predict_points(xy, model):
    """Posterior mean and variance of Z at each row of ``xy``."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    T = trend_matrix(xy, model.trend)
    trend = np.einsum("ij,j->i", T, model.params.alpha, optimize=False)
    corr, var = _kernels.predict_points(xy, model.basis.centers, model.basis.tau,
                                        model.eta_mean, model.eta_cov)
    return trend + corr, _check_var(var)


def predict_mean(loc, model):
    """``t(x)^T alpha + s(x)^T K S^T Sigma^-1 (Y - T alpha)``."""
    xy, scalar = _as_points(loc)
    mean, _ = predict_points(xy, model)
    return float(mean[0]) if scalar else mean


def predict_variance(loc, model):
    xy, scalar = _as_points(loc)
    _, var = predict_points(xy, model)
    return float(var[0]) if scalar else var


def predict(loc, model):
    xy, _ = _as_points(loc)
    mean, var = predict_points(xy, model)
    return Prediction(float(mean[0]), float(var[0]))


def predict_covariance(loc_a, loc_b, model):
    """Posterior covariance of Z between two locations."""
    sa = basis_matrix(np.asarray(loc_a, dtype=float)[None, :], model.basis)[0]
    sb = basis_matrix(np.asarray(loc_b, dtype=float)[None, :], model.basis)[0]
    cov = float(sa @ model.eta_cov @ sb)
    if np.array_equal(np.asarray(loc_a, float), np.asarray(loc_b, float)):
        cov = float(_check_var(np.array([cov]))[0])
    return cov


def grid_axes(bbox, resolution):
    if not resolution > 0:
        raise InvalidParameterError(f"resolution must be positive, got {resolution}")
    xmin, ymin, xmax, ymax = bbox
    if xmax < xmin or ymax < ymin:
        raise InvalidParameterError(f"malformed bounding box {bbox}")
    # tolerate float noise at the upper edge
    nx = int(np.floor((xmax - xmin) / resolution + 1e-9)) + 1
    ny = int(np.floor((ymax - ymin) / resolution + 1e-9)) + 1
    return xmin + resolution * np.arange(nx), ymin + resolution * np.arange(ny)


def predict_grid(bbox, resolution, model, max_points=MAX_GRID_POINTS):
    """Predict on the regular grid ``xmin + i*res, ymin + j*res`` inside ``bbox``."""
    xs, ys = grid_axes(bbox, resolution)
    if xs.size * ys.size > max_points:
        raise InvalidParameterError(
            f"grid of {xs.size} x {ys.size} nodes exceeds the cap of {max_points}")
    grid = Grid(xs, ys, None, None)
    mean, var = predict_points(grid.points(), model)
    grid.z_hat = mean.reshape(ys.size, xs.size)
    grid.var = var.reshape(ys.size, xs.size)
    return grid
