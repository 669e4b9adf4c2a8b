"""Cross-validation harness, RMSE and the log-normal baseline.

Folds are a uniform random partition of the measurement indices (no spatial
blocking).  A fold whose fit fails is reported in :attr:`CvReport.failed` and
left out of the mean and standard deviation.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .core import TrendSpec, build_basis_set, distance
from .em import EmConfig, fit_em
from .errors import DegenerateDesignError, FRKError, InvalidParameterError
from .prediction import predict_points

log = logging.getLogger(__name__)

METHODS = ("lognormal", "frk")


def rmse(pred, truth):
    """Root mean squared difference.

    The sum is exactly rounded (``math.fsum``), so the result does not depend
    on the order of the pairs.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if pred.shape != truth.shape:
        raise InvalidParameterError(f"length mismatch: {pred.size} vs {truth.size}")
    if pred.size == 0:
        raise InvalidParameterError("rmse of empty vectors")
    d = pred - truth
    return math.sqrt(math.fsum(d * d) / d.size)


def kfold_split(obs, k, seed=0):
    """Uniform random partition into ``k`` folds.

    ``obs`` is a :class:`~frkrem.core.Measurements` or a sample count.
    Returns ``k`` pairs ``(train_idx, test_idx)`` of sorted index arrays.
    """
    n = obs if isinstance(obs, (int, np.integer)) else len(obs)
    if k < 2:
        raise InvalidParameterError(f"k must be at least 2, got {k}")
    if n < k:
        raise InvalidParameterError(f"need at least k={k} samples, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(test)))
    return out


# --------------------------------------------------------------------------
# log-normal baseline
# --------------------------------------------------------------------------

class LognormalFit(NamedTuple):
    p_t: float
    kappa: float
    sigma2: float


def fit_lognormal_baseline(train, trend):
    """Least squares of Y on ``(1, -10 log10 dist)``.

    Closed-form simple regression on the centred regressor; ``sigma2`` is the
    mean squared residual.  The antenna term of ``trend`` (if any) is ignored.
    """
    if len(train) < 3:
        raise InvalidParameterError("baseline fit needs at least 3 points")
    x = -10.0 * np.log10(distance(train.xy, trend))
    y = train.value
    xm = x.mean()
    ym = y.mean()
    xc = x - xm
    sxx = float(xc @ xc)
    if not sxx > 1e-12 * max(float(x @ x), 1.0):
        raise DegenerateDesignError("all measurements at the same distance from the transmitter")
    kappa = float(xc @ (y - ym)) / sxx
    p_t = float(ym - kappa * xm)
    resid = y - p_t - kappa * x
    return LognormalFit(p_t, kappa, float(resid @ resid) / y.size)


def predict_lognormal(xy, fit, trend):
    """``p_t - 10 kappa log10 dist(x)``."""
    x = -10.0 * np.log10(distance(np.asarray(xy, dtype=float).reshape(-1, 2), trend))
    return fit.p_t + fit.kappa * x


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------

@dataclass
class CvReport:
    method: str
    k: int
    seed: int
    fold_rmse: list
    fold_params: list
    fold_n_test: list
    failed: list = field(default_factory=list)
    fold_time: list = field(default_factory=list)
    tau: Optional[float] = None
    r: list = field(default_factory=list)

    def ok_rmse(self):
        return np.array([v for v in self.fold_rmse if v is not None], dtype=float)

    @property
    def mean(self):
        v = self.ok_rmse()
        return float(v.mean()) if v.size else float("nan")

    @property
    def std(self):
        """Sample standard deviation (ddof=1) over the successful folds."""
        v = self.ok_rmse()
        return float(v.std(ddof=1)) if v.size > 1 else float("nan")

    @property
    def total_time(self):
        return float(sum(self.fold_time))

    def to_dict(self, timing=False):
        """Plain-data form; timings are left out unless asked for so that
        the output of a seeded run is reproducible byte for byte."""
        d = {"method": self.method, "k": self.k, "seed": self.seed, "tau": self.tau,
             "mean_rmse": self.mean, "std_rmse": self.std,
             "fold_rmse": self.fold_rmse, "fold_n_test": self.fold_n_test,
             "r": self.r, "fold_params": self.fold_params, "failed": self.failed}
        if timing:
            d["fold_time"] = self.fold_time
        return d


def _fit_fold(obs, train_idx, test_idx, method, tau, trend, config, bbox):
    train = obs.subset(train_idx)
    test = obs.subset(test_idx)
    if method == "lognormal":
        fit = fit_lognormal_baseline(train, trend)
        pred = predict_lognormal(test.xy, fit, trend)
        return rmse(pred, test.value), fit._asdict(), None
    basis = build_basis_set(bbox, tau, train.xy)
    model, trace = fit_em(train, basis, trend, config, warn=False)
    pred, _ = predict_points(test.xy, model)
    params = model.params.to_dict()
    params["converged"] = trace.converged
    params["n_iter"] = trace.n_iter
    return rmse(pred, test.value), params, basis.r


def cross_validate(obs, method, k=5, seed=0, tau=None, trend=None, config=None,
                   n_jobs=1, bbox=None):
    """k-fold cross-validation of ``method`` ("lognormal" or "frk").

    The error on a test point is ``Z_hat(x) - Y(x)``: the denoised prediction
    against the noisy measurement.  ``trend`` defaults to a transmitter at the
    centre of the data bounding box; ``bbox`` (default: that of ``obs``) is
    the area the FRK candidate grid covers.
    """
    if method not in METHODS:
        raise InvalidParameterError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "frk" and not (tau and tau > 0):
        raise InvalidParameterError("frk cross-validation needs a positive tau")
    bbox = bbox or obs.bbox()
    if trend is None:
        trend = TrendSpec((0.5 * (bbox[0] + bbox[2]), 0.5 * (bbox[1] + bbox[3])))
    config = config or EmConfig()
    splits = kfold_split(obs, k, seed)

    def run(i):
        train_idx, test_idx = splits[i]
        t0 = time.perf_counter()
        try:
            res = _fit_fold(obs, train_idx, test_idx, method, tau, trend, config, bbox)
        except (FRKError, np.linalg.LinAlgError) as exc:
            log.warning("fold %d failed: %s", i, exc)
            res = exc
        return res, time.perf_counter() - t0

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(run, range(k)))
    else:
        results = [run(i) for i in range(k)]

    report = CvReport(method, k, seed, [], [], [], tau=tau if method == "frk" else None)
    for i, (res, dt) in enumerate(results):
        report.fold_time.append(dt)
        report.fold_n_test.append(int(splits[i][1].size))
        if isinstance(res, Exception):
            report.fold_rmse.append(None)
            report.fold_params.append(None)
            report.r.append(None)
            report.failed.append({"fold": i, "error": type(res).__name__, "message": str(res)})
        else:
            report.fold_rmse.append(res[0])
            report.fold_params.append(res[1])
            report.r.append(res[2])
    return report
