"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``FRKREM_NO_NUMBA`` is unset or ``"0"``.  Both paths are always
importable (``*_numpy`` / ``*_numba``) so tests and the benchmark can compare
them directly; the unsuffixed names dispatch to the active backend.
"""

import os
import warnings

import numpy as np
from scipy import sparse

_DISABLED = os.environ.get("FRKREM_NO_NUMBA", "0") not in ("", "0")

try:
    import numba
    from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

if HAVE_NUMBA and "NUMBA_THREADING_LAYER" not in os.environ:
    # the kernels may run from several Python threads at once (per-cell and
    # per-fold fits), which needs a thread-safe layer; OpenMP is, and picking
    # it up front also skips the TBB version probe and its warning
    try:
        from numba.np.ufunc import omppool  # noqa: F401
        numba.config.THREADING_LAYER = "omp"
    except ImportError:  # pragma: no cover
        warnings.filterwarnings("ignore", message="The TBB threading layer")

BACKEND = "numba" if (HAVE_NUMBA and not _DISABLED) else "numpy"

# rows per chunk for the numpy fallback; bounds the (chunk, r) temporaries
_CHUNK = 4096


# --------------------------------------------------------------------------
# numpy reference implementations
# --------------------------------------------------------------------------

def bisquare_matrix_numpy(points, centers, tau):
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    n, r = points.shape[0], centers.shape[0]
    out = np.zeros((n, r))
    inv_tau2 = 1.0 / (tau * tau)
    for start in range(0, n, _CHUNK):
        p = points[start:start + _CHUNK]
        dx = p[:, 0, None] - centers[None, :, 0]
        dy = p[:, 1, None] - centers[None, :, 1]
        u = 1.0 - (dx * dx + dy * dy) * inv_tau2
        np.maximum(u, 0.0, out=u)
        out[start:start + _CHUNK] = u * u
    return out


def predict_points_numpy(points, centers, tau, weights, cov):
    """``s(x)^T weights`` and ``s(x)^T cov s(x)`` for each point.

    Only the few nonzero entries of each ``s(x)`` take part, and every sum
    runs within one row in a fixed order, so a point's result does not depend
    on which other points share its batch.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    n, r = points.shape[0], cov.shape[0]
    mean = np.empty(n)
    var = np.empty(n)
    for start in range(0, n, _CHUNK):
        S = bisquare_matrix_numpy(points[start:start + _CHUNK], centers, tau)
        m = S.shape[0]
        rows, cols = np.nonzero(S)
        vals = S[rows, cols]
        Ssp = sparse.csr_matrix((vals, (rows, cols)), shape=(m, r))
        mean[start:start + m] = np.bincount(rows, weights=vals * weights[cols], minlength=m)
        SC = np.asarray(Ssp @ cov)
        var[start:start + m] = np.bincount(rows, weights=vals * SC[rows, cols], minlength=m)
    return mean, var


def pairwise_distance_numpy(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dx = a[:, 0, None] - b[None, :, 0]
    dy = a[:, 1, None] - b[None, :, 1]
    return np.sqrt(dx * dx + dy * dy)


def bin_sums_numpy(labels, values, n_bins):
    """Per-bin (count, sum, sum of squares) of ``values``."""
    labels = np.asarray(labels, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    count = np.bincount(labels, minlength=n_bins).astype(np.float64)
    total = np.bincount(labels, weights=values, minlength=n_bins)
    total_sq = np.bincount(labels, weights=values * values, minlength=n_bins)
    return count, total, total_sq


def bin_rows_mean_numpy(labels, matrix, n_bins):
    """Row-average of ``matrix`` within each bin (empty bins give zeros)."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((n_bins, matrix.shape[1]))
    np.add.at(out, labels, matrix)
    count = np.bincount(labels, minlength=n_bins).astype(np.float64)
    nz = count > 0
    out[nz] /= count[nz, None]
    return out


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(parallel=True, cache=True, fastmath=False)
    def _bisquare_matrix_nb(points, centers, tau):
        n = points.shape[0]
        r = centers.shape[0]
        out = np.zeros((n, r))
        inv_tau2 = 1.0 / (tau * tau)
        tau2 = tau * tau
        for i in prange(n):
            px = points[i, 0]
            py = points[i, 1]
            for l in range(r):
                dx = px - centers[l, 0]
                dy = py - centers[l, 1]
                d2 = dx * dx + dy * dy
                if d2 < tau2:
                    u = 1.0 - d2 * inv_tau2
                    out[i, l] = u * u
        return out

    @njit(parallel=True, cache=True)
    def _predict_points_nb(points, centers, tau, weights, cov):
        n = points.shape[0]
        r = centers.shape[0]
        mean = np.zeros(n)
        var = np.zeros(n)
        tau2 = tau * tau
        inv_tau2 = 1.0 / tau2
        for i in prange(n):
            idx = np.empty(r, dtype=np.int64)
            val = np.empty(r)
            q = 0
            for l in range(r):
                dx = points[i, 0] - centers[l, 0]
                dy = points[i, 1] - centers[l, 1]
                d2 = dx * dx + dy * dy
                if d2 < tau2:
                    u = 1.0 - d2 * inv_tau2
                    idx[q] = l
                    val[q] = u * u
                    q += 1
            m = 0.0
            v = 0.0
            for a in range(q):
                m += val[a] * weights[idx[a]]
                row = 0.0
                for b in range(q):
                    row += cov[idx[a], idx[b]] * val[b]
                v += val[a] * row
            mean[i] = m
            var[i] = v
        return mean, var

    @njit(parallel=True, cache=True)
    def _pairwise_distance_nb(a, b):
        n = a.shape[0]
        m = b.shape[0]
        out = np.empty((n, m))
        for i in prange(n):
            for j in range(m):
                dx = a[i, 0] - b[j, 0]
                dy = a[i, 1] - b[j, 1]
                out[i, j] = np.sqrt(dx * dx + dy * dy)
        return out

    @njit(cache=True)
    def _bin_sums_nb(labels, values, n_bins):
        count = np.zeros(n_bins)
        total = np.zeros(n_bins)
        total_sq = np.zeros(n_bins)
        for i in range(labels.shape[0]):
            k = labels[i]
            v = values[i]
            count[k] += 1.0
            total[k] += v
            total_sq[k] += v * v
        return count, total, total_sq

    @njit(cache=True)
    def _bin_rows_mean_nb(labels, matrix, n_bins):
        r = matrix.shape[1]
        out = np.zeros((n_bins, r))
        count = np.zeros(n_bins)
        for i in range(labels.shape[0]):
            k = labels[i]
            count[k] += 1.0
            for j in range(r):
                out[k, j] += matrix[i, j]
        for k in range(n_bins):
            if count[k] > 0:
                for j in range(r):
                    out[k, j] /= count[k]
        return out


def bisquare_matrix_numba(points, centers, tau):
    return _bisquare_matrix_nb(np.ascontiguousarray(points, dtype=np.float64),
                               np.ascontiguousarray(centers, dtype=np.float64),
                               float(tau))


def predict_points_numba(points, centers, tau, weights, cov):
    return _predict_points_nb(np.ascontiguousarray(points, dtype=np.float64),
                              np.ascontiguousarray(centers, dtype=np.float64),
                              float(tau),
                              np.ascontiguousarray(weights, dtype=np.float64),
                              np.ascontiguousarray(cov, dtype=np.float64))


def pairwise_distance_numba(a, b):
    return _pairwise_distance_nb(np.ascontiguousarray(a, dtype=np.float64),
                                 np.ascontiguousarray(b, dtype=np.float64))


def bin_sums_numba(labels, values, n_bins):
    return _bin_sums_nb(np.ascontiguousarray(labels, dtype=np.int64),
                        np.ascontiguousarray(values, dtype=np.float64),
                        int(n_bins))


def bin_rows_mean_numba(labels, matrix, n_bins):
    return _bin_rows_mean_nb(np.ascontiguousarray(labels, dtype=np.int64),
                             np.ascontiguousarray(matrix, dtype=np.float64),
                             int(n_bins))


if BACKEND == "numba":
    bisquare_matrix = bisquare_matrix_numba
    predict_points = predict_points_numba
    pairwise_distance = pairwise_distance_numba
    bin_sums = bin_sums_numba
    bin_rows_mean = bin_rows_mean_numba
else:
    bisquare_matrix = bisquare_matrix_numpy
    predict_points = predict_points_numpy
    pairwise_distance = pairwise_distance_numpy
    bin_sums = bin_sums_numpy
    bin_rows_mean = bin_rows_mean_numpy
