"""Method-of-moments estimation of (sigma^2, K) from binned residuals.

OLS residuals ``D`` are pooled into ``M`` bins (hard assignment to the
nearest cell of a regular sub-grid).  Per bin we keep the mean residual
``Dbar`` and the mean squared residual ``V``; the empirical matrix
``Sigma_M`` has ``Dbar_l Dbar_k`` off the diagonal and ``V_k`` on it.
``sigma^2 I + S_M K S_M^T`` is then fitted to it in Frobenius norm through
the thin QR decomposition ``S_M = Q R``.

The fitted ``K`` is frequently not positive definite.  :func:`prop1_diagnostics`
reports why from the spectrum of ``Sigma_M``: ``Sigma_M`` is always PSD,
``sigma2_hat`` is bounded below by the smallest eigenvalue whose eigenspace
leaves the column space of ``S_M``, and ``K_hat`` is PD exactly when
``sigma2_hat < lambda_min(Q^T Sigma_M Q)``.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

from . import _kernels
from .core import FittedModel, ModelParams, Measurements, ols
from .errors import DegenerateDesignError, InvalidParameterError, NumericalFailure

# relative tolerance for eigenvalue sign decisions
EIG_RTOL = 1e-10


@dataclass
class Binning:
    centers: np.ndarray
    labels: np.ndarray
    counts: np.ndarray

    @property
    def M(self):
        return self.centers.shape[0]

    def weights(self):
        """Dense M x N 0/1 weight matrix (row l selects the members of bin l)."""
        W = np.zeros((self.M, self.labels.size))
        W[self.labels, np.arange(self.labels.size)] = 1.0
        return W


@dataclass
class Prop1Report:
    psd_ok: bool
    min_eigenvalue: float
    sigma2_hat: float
    sigma2_lower_bound: float
    lower_bound_ok: bool
    k_hat_pd: bool
    k_hat_margin: float
    remark_ok: bool
    degenerate_bins: list

    def to_dict(self):
        return asdict(self)


@dataclass
class MomentsResult:
    sigma2_hat: float
    K_hat: np.ndarray
    sigma_hat_M: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    diagnostics: Prop1Report = None
    repaired: bool = False


def default_bin_count(r, n):
    """``4 r`` clipped to ``(r, N/4]``."""
    return int(min(max(4 * r, r + 1), n // 4))


def _subgrid(xy, m):
    xmin, ymin = xy.min(axis=0)
    xmax, ymax = xy.max(axis=0)
    w = max(xmax - xmin, 1e-9)
    h = max(ymax - ymin, 1e-9)
    nx = max(1, int(round(math.sqrt(m * w / h))))
    ny = max(1, int(math.ceil(m / nx)))
    ix = np.clip(((xy[:, 0] - xmin) / (w / nx)).astype(np.int64), 0, nx - 1)
    iy = np.clip(((xy[:, 1] - ymin) / (h / ny)).astype(np.int64), 0, ny - 1)
    cx = xmin + (np.arange(nx) + 0.5) * (w / nx)
    cy = ymin + (np.arange(ny) + 0.5) * (h / ny)
    gx, gy = np.meshgrid(cx, cy)
    return ix + nx * iy, np.column_stack([gx.ravel(), gy.ravel()])


def bin_observations(obs, dm, M, empty="drop"):
    """Bin OLS residuals; returns ``(Binning, D, Dbar, V)``.

    Each observation goes to the nearest cell center of a regular sub-grid
    with about ``M`` cells.  Empty cells are dropped (``empty="drop"``) or
    rejected (``empty="error"``), so the returned bin count can be below ``M``.
    """
    y = obs.value if isinstance(obs, Measurements) else np.asarray(obs, dtype=float)
    xy = obs.xy if isinstance(obs, Measurements) else None
    if xy is None:
        raise InvalidParameterError("bin_observations needs located measurements")
    n, r = dm.n, dm.basis.r
    if not r < M < n:
        raise InvalidParameterError(f"need r < M < N, got r={r}, M={M}, N={n}")
    D = y - dm.T @ ols(dm.T, y)
    raw, centers = _subgrid(xy, M)
    used = np.unique(raw)
    if used.size < centers.shape[0] and empty == "error":
        raise InvalidParameterError(f"{centers.shape[0] - used.size} empty bins")
    labels = np.searchsorted(used, raw)
    Dbar, V, count = bin_statistics(labels, D, used.size)
    return Binning(centers[used], labels, count), D, Dbar, V


def bin_statistics(labels, D, M):
    """Per-bin mean ``Dbar`` and mean square ``V`` of ``D``, plus the counts."""
    count, total, total_sq = _kernels.bin_sums(labels, D, M)
    if np.any(count == 0):
        raise InvalidParameterError("every bin needs at least one observation")
    return total / count, total_sq / count, count


def sigma_hat_M(Dbar, V):
    out = np.outer(Dbar, Dbar)
    np.fill_diagonal(out, V)
    return out


def binned_basis(binning, S):
    """``S_M``: rows of ``S`` averaged within each bin."""
    return _kernels.bin_rows_mean(binning.labels, S, binning.M)


def fit_moments(sigma_M, S_M):
    """Frobenius fit of ``sigma^2 I + S_M K S_M^T`` to ``sigma_M``."""
    sigma_M = np.asarray(sigma_M, dtype=float)
    S_M = np.asarray(S_M, dtype=float)
    m, r = S_M.shape
    if m <= r:
        raise InvalidParameterError(f"need more bins than basis functions ({m} <= {r})")
    Q, R = np.linalg.qr(S_M)
    d = np.abs(np.diag(R))
    if d.min() <= 1e-12 * max(d.max(), 1.0):
        raise DegenerateDesignError(
            "binned basis matrix S_M is rank deficient; the moment fit needs full column rank")
    P = np.eye(m) - Q @ Q.T
    sigma2 = float(np.trace(P @ sigma_M) / np.trace(P))
    Rinv = linalg.solve_triangular(R, np.eye(r))
    inner = Q.T @ (sigma_M - sigma2 * np.eye(m)) @ Q
    K = Rinv @ inner @ Rinv.T
    K = 0.5 * (K + K.T)
    result = MomentsResult(sigma2, K, sigma_M, Q, R)
    result.diagnostics = prop1_diagnostics(result)
    return result


def prop1_diagnostics(result, bin_spread=None):
    """Spectral diagnostics of a moment fit.

    ``bin_spread`` (max minus min residual per bin) enables the per-bin check
    that each bin has two distinct residuals, which is what makes ``Sigma_M``
    strictly positive definite.
    """
    Sm = result.sigma_hat_M
    Q = result.Q
    lam, U = np.linalg.eigh(Sm)
    scale = max(float(np.abs(lam).max()), 1e-300)
    tol = EIG_RTOL * scale
    # B_jj = |u_j|^2 - |Q^T u_j|^2: the part of eigenvector j outside span(S_M)
    outside = 1.0 - np.sum((Q.T @ U) ** 2, axis=0)
    mask = outside > 1e-12
    bound = float(lam[mask].min()) if mask.any() else float("inf")
    lam_q = float(np.linalg.eigvalsh(Q.T @ Sm @ Q).min())
    margin = lam_q - result.sigma2_hat
    if bin_spread is None:
        remark_ok = bool(lam.min() > tol)
        bad = []
    else:
        bad = [int(i) for i in np.flatnonzero(np.asarray(bin_spread) <= 0)]
        remark_ok = not bad
    return Prop1Report(
        psd_ok=bool(lam.min() >= -tol),
        min_eigenvalue=float(lam.min()),
        sigma2_hat=float(result.sigma2_hat),
        sigma2_lower_bound=bound,
        lower_bound_ok=bool(result.sigma2_hat >= bound - tol),
        k_hat_pd=bool(margin > tol),
        k_hat_margin=float(margin),
        remark_ok=remark_ok,
        degenerate_bins=bad,
    )


def _bin_spread(labels, D, m):
    hi = np.full(m, -np.inf)
    lo = np.full(m, np.inf)
    np.maximum.at(hi, labels, D)
    np.minimum.at(lo, labels, D)
    return hi - lo


def lift_eigenvalues(K, rel=1e-8):
    """Raise eigenvalues of ``K`` to at least ``rel * tr(K) / r``.

    When ``tr(K) <= 0`` the mean absolute eigenvalue stands in for
    ``tr(K) / r``, and the floor never drops below the rounding level of the
    reconstruction, so the result always factors.
    """
    r = K.shape[0]
    w, U = np.linalg.eigh(0.5 * (K + K.T))
    scale = float(np.trace(K)) / r
    if not scale > 0:
        scale = float(np.mean(np.abs(w)))
    eps = max(rel * scale, 64 * np.finfo(float).eps * float(np.abs(w).max()), 1e-300)
    w = np.maximum(w, eps)
    out = (U * w) @ U.T
    return 0.5 * (out + out.T)


def estimate_moments(obs, dm, M=None, empty="drop", repair=False):
    """Whole moments pipeline: bin, build ``Sigma_M`` and ``S_M``, fit, diagnose."""
    if M is None:
        M = default_bin_count(dm.basis.r, dm.n)
    binning, D, Dbar, V = bin_observations(obs, dm, M, empty)
    S_M = binned_basis(binning, dm.S)
    result = fit_moments(sigma_hat_M(Dbar, V), S_M)
    result.diagnostics = prop1_diagnostics(result, _bin_spread(binning.labels, D, binning.M))
    if repair and not result.diagnostics.k_hat_pd:
        result.K_hat = lift_eigenvalues(result.K_hat)
        result.repaired = True
    return result


def moments_model(obs, dm, result, trend):
    """Prediction model from a moment fit, with the WLS trend estimate.

    Refuses a ``K_hat`` that is not positive definite unless it was repaired.
    """
    from .prediction import condition_with_K

    if not (result.diagnostics.k_hat_pd or result.repaired):
        raise NumericalFailure(
            "moment estimate of K is not positive definite "
            f"(margin {result.diagnostics.k_hat_margin:.3g}); use EM or repair=True")
    if not result.sigma2_hat > 0:
        raise NumericalFailure("moment estimate of sigma^2 is not positive")
    y = obs.value if isinstance(obs, Measurements) else np.asarray(obs, dtype=float)
    model = condition_with_K(y, dm, result.sigma2_hat, result.K_hat, trend, alpha=None)
    model.method = "moments"
    return model
