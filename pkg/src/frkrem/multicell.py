"""Multicell coverage: one FRK model per cell plus best-serving-cell rules.

Each cell is fitted on the measurements that report it as serving cell.  At
a location ``x`` the candidate cells are those whose coverage domain (a
closed wedge around the antenna azimuth, optionally radius-limited) contains
``x``; the predicted serving cell is the candidate with the largest predicted
power and the predicted RSRP is that power.  Ties go to the lowest cid.
"""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .antenna import AntennaSpec, antenna_gain, off_boresight  # noqa: F401
from .core import FittedModel, Measurements, TrendSpec, build_basis_set
from .em import EmConfig, fit_em
from .errors import InvalidParameterError
from .prediction import Grid, grid_axes, predict_points

log = logging.getLogger(__name__)

UNCOVERED = ""


@dataclass(frozen=True)
class CellDomain:
    half_angle: float = 90.0
    max_radius: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.half_angle <= 180:
            raise InvalidParameterError("half_angle must lie in (0, 180]")
        if self.max_radius is not None and self.max_radius <= 0:
            raise InvalidParameterError("max_radius must be positive")

    def to_dict(self):
        return {"half_angle": self.half_angle, "max_radius": self.max_radius}


@dataclass
class CellModel:
    cid: str
    antenna: AntennaSpec
    domain: Optional[CellDomain]
    fitted: FittedModel
    trace: object = None


def in_domain(loc, cell):
    """Whether ``loc`` (one point or an (n, 2) array) lies in the cell's domain.

    ``cell.domain = None`` means the whole plane.
    """
    arr = np.asarray(loc, dtype=np.float64)
    xy = arr.reshape(-1, 2)
    dom = cell.domain
    if dom is None:
        inside = np.ones(xy.shape[0], dtype=bool)
    else:
        psi = off_boresight(xy, cell.antenna.site, cell.antenna.azimuth)
        inside = np.abs(psi) <= dom.half_angle + 1e-9
        if dom.max_radius is not None:
            d = np.hypot(xy[:, 0] - cell.antenna.site[0], xy[:, 1] - cell.antenna.site[1])
            inside &= d <= dom.max_radius
    return bool(inside[0]) if arr.ndim == 1 else inside


def fit_cells(obs, antennas, tau, domains=None, config=None, directional=True,
              bbox=None, min_dist=1.0, n_jobs=1):
    """Fit one EM model per cell.

    ``antennas`` maps cid -> :class:`AntennaSpec`; ``domains`` maps cid ->
    :class:`CellDomain` (a missing entry or ``domains=None`` means no domain
    restriction).  All cells start from the same candidate grid over ``bbox``
    (default: bounding box of all observations) and prune it on their own data.
    With ``directional=False`` the trend omits the antenna gain column.
    Cells with fewer than ``p + 2`` observations are skipped with a warning.
    """
    if obs.cid is None:
        raise InvalidParameterError("multicell fitting needs measurements with a cid column")
    config = config or EmConfig()
    bbox = bbox or obs.bbox()
    p = 3 if directional else 2

    def fit_one(cid):
        sel = np.flatnonzero(obs.cid == cid)
        if sel.size < p + 2:
            warnings.warn(f"cell {cid}: only {sel.size} observations, skipped",
                          RuntimeWarning, stacklevel=3)
            return None
        sub = obs.subset(sel)
        antenna = antennas[cid]
        trend = TrendSpec(antenna.site, antenna if directional else None, min_dist)
        basis = build_basis_set(bbox, tau, sub.xy)
        fitted, trace = fit_em(sub, basis, trend, config, warn=False)
        if not trace.converged:
            log.warning("cell %s: %s", cid, trace.warning)
        domain = None if domains is None else domains.get(cid)
        return CellModel(cid, antenna, domain, fitted, trace)

    cids = sorted(antennas)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            fitted = list(pool.map(fit_one, cids))
    else:
        fitted = [fit_one(c) for c in cids]
    return [c for c in fitted if c is not None]


def cell_predictions(xy, cells):
    """Predicted power of every cell at every point; NaN outside the domain."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    z = np.full((xy.shape[0], len(cells)), np.nan)
    var = np.full_like(z, np.nan)
    for j, cell in enumerate(cells):
        mask = in_domain(xy, cell)
        if mask.any():
            z[mask, j], var[mask, j] = predict_points(xy[mask], cell.fitted)
    return z, var


def _argmax_cells(xy, cells):
    cells = sorted(cells, key=lambda c: c.cid)
    z, var = cell_predictions(xy, cells)
    covered = ~np.all(np.isnan(z), axis=1)
    best = np.argmax(np.where(np.isnan(z), -np.inf, z), axis=1)
    ids = np.array([c.cid for c in cells], dtype=object)
    rows = np.arange(z.shape[0])
    cid_hat = np.where(covered, ids[best], UNCOVERED).astype(str)
    z_hat = np.where(covered, z[rows, best], np.nan)
    v_hat = np.where(covered, var[rows, best], np.nan)
    return cid_hat, z_hat, v_hat


def predict_cid_and_power(loc, cells):
    """Serving cell and its predicted power at ``loc``.

    Returns ``(cid, z)`` for one point or two arrays for an (n, 2) input.
    Uncovered points get cid ``UNCOVERED`` (the empty string) and NaN power.
    """
    arr = np.asarray(loc, dtype=np.float64)
    cid_hat, z_hat, _ = _argmax_cells(arr.reshape(-1, 2), cells)
    if arr.ndim == 1:
        return str(cid_hat[0]), float(z_hat[0])
    return cid_hat, z_hat


def cid_errors(test, cells):
    """Error count breakdown of the serving-cell prediction on ``test``."""
    if len(test) == 0:
        raise InvalidParameterError("empty test set")
    cid_hat, _, _ = _argmax_cells(test.xy, cells)
    uncovered = cid_hat == UNCOVERED
    wrong = cid_hat != test.cid
    return {"n": len(test), "errors": int(wrong.sum()),
            "uncovered": int(uncovered.sum()), "rate": float(wrong.mean())}


def cid_error_rate(test, cells):
    """Fraction of test points whose predicted serving cell differs from the
    reported one; uncovered points count as errors."""
    return cid_errors(test, cells)["rate"]


def predict_cid_grid(bbox, resolution, cells):
    xs, ys = grid_axes(bbox, resolution)
    grid = Grid(xs, ys, None, None)
    cid_hat, z_hat, v_hat = _argmax_cells(grid.points(), cells)
    grid.z_hat = z_hat.reshape(ys.size, xs.size)
    grid.var = v_hat.reshape(ys.size, xs.size)
    grid.cid_hat = cid_hat.reshape(ys.size, xs.size)
    return grid
