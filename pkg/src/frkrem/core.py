"""Fixed Rank Kriging generative model.

The received power (dB) at a planar location ``x`` is modelled as::

    Y(x) = t(x)^T alpha + s(x)^T eta + sigma * eps(x)

with a log-distance trend ``t(x) = (1, -10 log10 dist(x) [, G(x)])``, ``r``
compactly supported bi-square basis functions ``s(x)``, ``eta ~ N(0, K)``
with ``K = Ktilde(phi) / beta`` and ``Ktilde_ij = exp(-|c_i - c_j| / e^phi)``.

Note on logarithms: the path-loss term uses the base-10 logarithm throughout
(the usual ``10 * kappa * log10(d)`` convention).

The covariance of the N observations, ``sigma^2 I + S K S^T``, is never
formed.  Every product with its inverse goes through the r x r matrix
``sigma^2 K^{-1} + S^T S`` (Woodbury), so all costs are O(r^2 N + r^3).

Locations are plain ``(x, y)`` pairs in metres; collections of locations are
``(n, 2)`` float arrays.
"""

import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.linalg import lapack
from scipy.spatial import cKDTree

from . import _kernels
from .antenna import AntennaSpec, antenna_gain
from .errors import (DegenerateDesignError, EmptyBasisError,
                     InvalidParameterError, NumericalFailure,
                     SingularMatrixError)

LOG_2PI = np.log(2.0 * np.pi)

# condition number of T^T T beyond which the trend is declared unidentifiable
DESIGN_COND_MAX = 1e12


# --------------------------------------------------------------------------
# data types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Measurements:
    """Geo-located received-power samples, stored column-wise.

    ``cid`` is ``None`` for single-cell data, otherwise a string array with
    the serving-cell identifier of every row.
    """

    xy: np.ndarray
    value: np.ndarray
    cid: Optional[np.ndarray] = None

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        value = np.asarray(self.value, dtype=np.float64).reshape(-1)
        if xy.shape[0] != value.shape[0]:
            raise InvalidParameterError("xy and value lengths differ")
        if not (np.all(np.isfinite(xy)) and np.all(np.isfinite(value))):
            raise InvalidParameterError("measurements must be finite")
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "value", value)
        if self.cid is not None:
            cid = np.asarray(self.cid).astype(str).reshape(-1)
            if cid.shape[0] != value.shape[0]:
                raise InvalidParameterError("cid length differs")
            object.__setattr__(self, "cid", cid)

    def __len__(self):
        return self.value.shape[0]

    def subset(self, index):
        index = np.asarray(index)
        cid = None if self.cid is None else self.cid[index]
        return Measurements(self.xy[index], self.value[index], cid)

    def bbox(self):
        lo = self.xy.min(axis=0)
        hi = self.xy.max(axis=0)
        return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


@dataclass(frozen=True)
class BasisSet:
    """Bi-square basis: ``r`` centers sharing one support radius ``tau``."""

    centers: np.ndarray
    tau: float
    r_max: Optional[int] = None

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        if self.tau <= 0:
            raise InvalidParameterError(f"tau must be positive, got {self.tau}")
        if centers.shape[0] < 1:
            raise EmptyBasisError("basis set has no centers")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def r(self):
        return self.centers.shape[0]

    @cached_property
    def distances(self):
        """r x r matrix of center-to-center distances."""
        return _kernels.pairwise_distance(self.centers, self.centers)


@dataclass(frozen=True)
class TrendSpec:
    """Transmitter position, optional antenna pattern, distance floor."""

    tx: tuple
    gain: Optional[AntennaSpec] = None
    min_dist: float = 1.0

    def __post_init__(self):
        if self.min_dist <= 0:
            raise InvalidParameterError("min_dist must be positive")
        object.__setattr__(self, "tx", (float(self.tx[0]), float(self.tx[1])))

    @property
    def p(self):
        return 2 if self.gain is None else 3


@dataclass
class ModelParams:
    """theta = (alpha, sigma2, beta, phi).

    alpha is ``(p_t, kappa)`` or ``(p_t, kappa, varsigma)``; ``1/beta`` is the
    variance of each eta component and ``exp(phi)`` the correlation range (m).
    """

    alpha: np.ndarray
    sigma2: float
    beta: float
    phi: float

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
        self.sigma2 = float(self.sigma2)
        self.beta = float(self.beta)
        self.phi = float(self.phi)
        if not self.sigma2 > 0:
            raise InvalidParameterError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.beta > 0:
            raise InvalidParameterError(f"beta must be positive, got {self.beta}")

    def as_vector(self):
        return np.concatenate([self.alpha, [self.sigma2, self.beta, self.phi]])

    def copy(self, **changes):
        d = dict(alpha=self.alpha.copy(), sigma2=self.sigma2,
                 beta=self.beta, phi=self.phi)
        d.update(changes)
        return ModelParams(**d)

    def to_dict(self):
        return {"alpha": [float(a) for a in self.alpha], "sigma2": self.sigma2,
                "beta": self.beta, "phi": self.phi}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["alpha"], dtype=float), d["sigma2"], d["beta"], d["phi"])


@dataclass
class DesignMatrices:
    """Trend matrix ``T`` (N x p), basis matrix ``S`` (N x r), and the basis.

    ``StS`` is cached since every EM iteration needs it.
    """

    T: np.ndarray
    S: np.ndarray
    basis: BasisSet
    StS: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.StS = self.S.T @ self.S

    @property
    def n(self):
        return self.T.shape[0]


@dataclass
class FittedModel:
    """Parameters plus the r-sized caches needed for prediction.

    ``eta_mean`` is ``K S^T Sigma^{-1} (Y - T alpha)`` and ``eta_cov`` is
    ``K - K S^T Sigma^{-1} S K``; predictions only need ``s(x)`` against them.
    """

    params: ModelParams
    basis: BasisSet
    trend: TrendSpec
    eta_mean: np.ndarray
    eta_cov: np.ndarray
    n_obs: int
    loglik: float = float("nan")
    converged: bool = True
    method: str = "em"


# --------------------------------------------------------------------------
# basis functions
# --------------------------------------------------------------------------

def bisquare_eval(loc, center, tau):
    """Bi-square value ``[1 - (d/tau)^2]^2`` for ``d <= tau``, else 0."""
    if tau <= 0:
        raise InvalidParameterError(f"tau must be positive, got {tau}")
    d = np.hypot(loc[0] - center[0], loc[1] - center[1])
    if d > tau:
        return 0.0
    u = 1.0 - (d / tau) ** 2
    return float(u * u)


def _axis_centers(lo, hi, tau):
    # round-half-up count of tau-wide squares, centred on the extent
    n = max(1, int(np.floor((hi - lo) / tau + 0.5)))
    mid = 0.5 * (lo + hi)
    return mid + (np.arange(n) - 0.5 * (n - 1)) * tau


def grid_centers(bbox, tau):
    """Candidate centers: a grid of ``tau x tau`` squares covering ``bbox``.

    The square count per axis is ``round(extent / tau)`` (at least one) and the
    grid is centred on the box.  A 1000 m side gives 8, 13, 20, 33 squares for
    tau = 120, 80, 50, 30 m.
    """
    xmin, ymin, xmax, ymax = bbox
    if tau <= 0:
        raise InvalidParameterError(f"tau must be positive, got {tau}")
    if not (xmax >= xmin and ymax >= ymin):
        raise InvalidParameterError(f"malformed bounding box {bbox}")
    if xmax - xmin <= 0 and ymax - ymin <= 0:
        raise InvalidParameterError("bounding box is degenerate")
    cx = _axis_centers(xmin, xmax, tau)
    cy = _axis_centers(ymin, ymax, tau)
    gx, gy = np.meshgrid(cx, cy)
    return np.column_stack([gx.ravel(), gy.ravel()])


def build_basis_set(bbox, tau, obs_xy):
    """Place grid centers over ``bbox`` and drop those with no data nearby.

    A center is kept when at least one observation lies strictly closer than
    ``tau``, so every kept column of ``S`` has a nonzero entry.
    """
    candidates = grid_centers(bbox, tau)
    obs_xy = np.asarray(obs_xy, dtype=np.float64).reshape(-1, 2)
    if obs_xy.shape[0] == 0:
        raise EmptyBasisError("no observations to support the basis")
    nearest, _ = cKDTree(obs_xy).query(candidates, k=1)
    keep = nearest < tau
    if not keep.any():
        raise EmptyBasisError(
            f"no observation within tau={tau} of any of {len(candidates)} candidate centers")
    return BasisSet(candidates[keep], tau, r_max=len(candidates))


def basis_matrix(xy, basis):
    """``S`` rows ``s(x)^T`` for every location in ``xy``."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    return _kernels.bisquare_matrix(xy, basis.centers, basis.tau)


# --------------------------------------------------------------------------
# trend
# --------------------------------------------------------------------------

def distance(xy, spec):
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    d = np.hypot(xy[:, 0] - spec.tx[0], xy[:, 1] - spec.tx[1])
    return np.maximum(d, spec.min_dist)


def trend_matrix(xy, spec):
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    cols = [np.ones(xy.shape[0]), -10.0 * np.log10(distance(xy, spec))]
    if spec.gain is not None:
        cols.append(antenna_gain(xy, spec.gain))
    return np.column_stack(cols)


def trend_vector(loc, spec):
    """``t(x)`` at one location."""
    return trend_matrix(np.asarray(loc, dtype=np.float64)[None, :], spec)[0]


def build_design_matrices(obs, basis, spec):
    xy = obs.xy if isinstance(obs, Measurements) else np.asarray(obs, dtype=float)
    T = trend_matrix(xy, spec)
    n, p = T.shape
    if n < p + 1:
        raise DegenerateDesignError(f"need at least {p + 1} observations, got {n}")
    check_trend_rank(T)
    return DesignMatrices(T, basis_matrix(xy, basis), basis)


def check_trend_rank(T):
    cond = np.linalg.cond(T.T @ T)
    if not np.isfinite(cond) or cond > DESIGN_COND_MAX:
        raise DegenerateDesignError(
            f"trend matrix is rank deficient (cond(T^T T) = {cond:.3g})")
    return cond


def ols(T, y):
    """Least-squares coefficients of ``y`` on the columns of ``T``."""
    check_trend_rank(T)
    coef, *_ = np.linalg.lstsq(T, y, rcond=None)
    return coef


# --------------------------------------------------------------------------
# covariance of eta
# --------------------------------------------------------------------------

def correlation_matrix(basis, phi):
    """``Ktilde(phi)``: exponential correlation between basis centers."""
    return np.exp(-basis.distances * np.exp(-phi))


def covariance_K(basis, beta, phi):
    if beta <= 0:
        raise InvalidParameterError(f"beta must be positive, got {beta}")
    if basis.r > 1:
        off = basis.distances[~np.eye(basis.r, dtype=bool)]
        if np.any(off == 0):
            raise SingularMatrixError("duplicate basis centers make K singular")
    return correlation_matrix(basis, phi) / beta


def cholesky(A, what="matrix"):
    try:
        return linalg.cho_factor(A, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"{what} is not positive definite: {exc}") from None


def chol_logdet(cf):
    return 2.0 * np.sum(np.log(np.diag(cf[0])))


def cho_solve(cf, b):
    return linalg.cho_solve(cf, b, check_finite=False)


def cho_inverse(cf):
    """Symmetric inverse from a ``cho_factor`` result (LAPACK potri)."""
    c, lower = cf
    inv, info = lapack.dpotri(c, lower=lower)
    if info != 0:
        raise SingularMatrixError(f"potri failed with info={info}")
    tri = np.tril(inv) if lower else np.triu(inv)
    return tri + (np.tril(inv, -1).T if lower else np.triu(inv, 1).T)


class KtildeFactor:
    """``Ktilde(phi)`` with its Cholesky factor, inverse and log-determinant."""

    __slots__ = ("phi", "Kt", "cf", "inv", "logdet")

    def __init__(self, basis, phi):
        self.phi = phi
        self.Kt = correlation_matrix(basis, phi)
        self.cf = cholesky(self.Kt, "correlation matrix Ktilde")
        self.inv = cho_inverse(self.cf)
        self.logdet = chol_logdet(self.cf)


_FACTOR_CACHE_SIZE = 6
_factor_lock = threading.Lock()


def ktilde_factor(basis, phi):
    """Cached :class:`KtildeFactor`; EM revisits the same phi several times per sweep."""
    with _factor_lock:
        cache = basis.__dict__.setdefault("_kt_cache", {})
        fac = cache.get(phi)
    if fac is None:
        fac = KtildeFactor(basis, phi)
        with _factor_lock:
            if len(cache) >= _FACTOR_CACHE_SIZE:
                cache.pop(next(iter(cache)))
            cache[phi] = fac
    return fac


class LowRankSigma:
    """Factorisations behind ``Sigma = sigma^2 I + S K S^T``.

    Holds the factor of ``Ktilde`` and the Cholesky factor of the inner r x r
    matrix ``sigma^2 K^{-1} + S^T S``; nothing of size N x N is ever built.
    """

    def __init__(self, dm, params):
        self.dm = dm
        self.params = params
        self.kt = ktilde_factor(dm.basis, params.phi)
        self.K_inv = params.beta * self.kt.inv
        inner = params.sigma2 * self.K_inv + dm.StS
        inner = 0.5 * (inner + inner.T)
        self.inner_cf = cholesky(inner, "inner matrix sigma^2 K^-1 + S^T S")

    def logdet_K(self):
        return self.kt.logdet - self.dm.basis.r * np.log(self.params.beta)

    def logdet_sigma(self):
        n, r = self.dm.n, self.dm.basis.r
        return ((n - r) * np.log(self.params.sigma2) + chol_logdet(self.inner_cf)
                + self.logdet_K())

    def solve(self, v):
        """``Sigma^{-1} v`` for a vector or an (N, k) block."""
        S = self.dm.S
        w = cho_solve(self.inner_cf, S.T @ v)
        return (v - S @ w) / self.params.sigma2


def _guard_no_nxn(n, *arrays):
    if __debug__:
        for a in arrays:
            assert not (np.ndim(a) == 2 and a.shape == (n, n) and n > 1), \
                "N x N matrix materialised"


def apply_sigma_inverse(v, dm, params):
    """``Sigma^{-1} v`` via the r x r identity; cost O(r^2 N + r^3)."""
    v = np.asarray(v, dtype=np.float64)
    out = LowRankSigma(dm, params).solve(v)
    _guard_no_nxn(dm.n, out)
    return out


def log_likelihood(y, dm, params):
    """Gaussian log-density of ``y`` under ``N(T alpha, Sigma)``.

    Includes the ``-(N/2) log(2 pi)`` constant so values for different
    parameters and data sets are directly comparable.
    """
    y = np.asarray(y, dtype=np.float64)
    lr = LowRankSigma(dm, params)
    resid = y - dm.T @ params.alpha
    quad = float(resid @ lr.solve(resid))
    return -0.5 * lr.logdet_sigma() - 0.5 * quad - 0.5 * dm.n * LOG_2PI
