"""Seeded synthetic coverage data.

Every generator takes a :class:`ScenarioSpec` and is a pure function of it:
the same spec (seed included) always yields bit-identical arrays.

``noise_var`` is a variance in dB^2; the default of 3 matches the usual
"3 dB noise" drive-test setting read as a variance.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .antenna import AntennaSpec, antenna_gain
from .core import (BasisSet, Measurements, TrendSpec, basis_matrix,
                   covariance_K, grid_centers, trend_matrix)
from .errors import InvalidParameterError, NumericalFailure


@dataclass(frozen=True)
class ScenarioSpec:
    """Area, sampling pattern and ground-truth parameters of one data set.

    Give either ``grid_step`` (regular grid over ``bbox``) or ``n_points``
    (uniform random locations).
    """

    bbox: tuple = (0.0, 0.0, 1000.0, 1000.0)
    n_points: Optional[int] = 2000
    grid_step: Optional[float] = None
    tx: tuple = (500.0, 500.0)
    p_t: float = -49.55
    kappa: float = 2.73
    varsigma: float = 0.0
    antenna: Optional[AntennaSpec] = None
    noise_var: float = 3.0
    # shadowing: 1/beta is the variance of each eta, exp(phi) the range in m
    inv_beta: float = 12.5
    phi: float = 3.63
    truth_tau: float = 50.0
    min_dist: float = 1.0
    seed: int = 0

    @property
    def trend(self):
        return TrendSpec(self.tx, self.antenna, self.min_dist)

    @property
    def alpha(self):
        a = [self.p_t, self.kappa]
        if self.antenna is not None:
            a.append(self.varsigma)
        return np.array(a)


def sample_locations(spec, rng=None):
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    xmin, ymin, xmax, ymax = spec.bbox
    if spec.grid_step is not None:
        xs = np.arange(xmin, xmax + 1e-9, spec.grid_step)
        ys = np.arange(ymin, ymax + 1e-9, spec.grid_step)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])
    if not spec.n_points or spec.n_points < 1:
        raise InvalidParameterError("need grid_step or a positive n_points")
    return np.column_stack([rng.uniform(xmin, xmax, spec.n_points),
                            rng.uniform(ymin, ymax, spec.n_points)])


def truth_basis(spec):
    """Unpruned grid of centers used to realise correlated shadowing."""
    return BasisSet(grid_centers(spec.bbox, spec.truth_tau), spec.truth_tau)


def draw_eta(basis, inv_beta, phi, rng):
    """Draw eta ~ N(0, K) through a symmetric square root of K."""
    K = covariance_K(basis, 1.0 / inv_beta, phi)
    w, U = np.linalg.eigh(K)
    if w.min() < -1e-10 * max(w.max(), 1.0):
        raise NumericalFailure("K is not positive semi-definite")
    root = U * np.sqrt(np.clip(w, 0.0, None))
    return root @ rng.standard_normal(basis.r)


def gen_pathloss(spec):
    """Noiseless log-distance field ``p_t - 10 kappa log10 d``."""
    return gen_lognormal(replace(spec, noise_var=0.0))


def gen_lognormal(spec):
    """Log-distance trend plus iid Gaussian shadowing of variance ``noise_var``."""
    if spec.noise_var < 0:
        raise InvalidParameterError("noise_var must be non-negative")
    rng = np.random.default_rng(spec.seed)
    xy = sample_locations(spec, rng)
    trend = trend_matrix(xy, spec.trend) @ spec.alpha
    y = trend + np.sqrt(spec.noise_var) * rng.standard_normal(xy.shape[0])
    return Measurements(xy, y)


def gen_frk(spec, basis):
    """FRK data ``t(x)^T alpha + s(x)^T eta + sigma eps``; returns ``(obs, eta)``."""
    if spec.noise_var < 0:
        raise InvalidParameterError("noise_var must be non-negative")
    rng = np.random.default_rng(spec.seed)
    xy = sample_locations(spec, rng)
    eta = draw_eta(basis, spec.inv_beta, spec.phi, rng)
    z = trend_matrix(xy, spec.trend) @ spec.alpha + basis_matrix(xy, basis) @ eta
    y = z + np.sqrt(spec.noise_var) * rng.standard_normal(xy.shape[0])
    return Measurements(xy, y), eta


def gen_correlated(spec):
    """Correlated shadowing realised on a fine truth basis of radius ``truth_tau``."""
    obs, _ = gen_frk(spec, truth_basis(spec))
    return obs


# --------------------------------------------------------------------------
# multicell
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CellTruth:
    cid: str
    antenna: AntennaSpec
    p_t: float = -45.0
    kappa: float = 3.2
    varsigma: float = 1.0
    inv_beta: float = 8.0
    phi: float = 4.5


@dataclass
class MulticellSample:
    obs: Measurements
    # (N, n_cells) noiseless received power of every cell at every point
    fields: np.ndarray
    cids: list = field(default_factory=list)


def default_layout(seed=0):
    """Four tri-sector sites (azimuths 0/120/240, rotated per site) -> 12 cells."""
    rng = np.random.default_rng(10_000 + seed)
    sites = [(800.0, 950.0), (2300.0, 1100.0), (850.0, 3050.0), (2250.0, 3150.0)]
    rotations = [0.0, 30.0, 60.0, 15.0]
    cells = []
    for s, (site, rot) in enumerate(zip(sites, rotations)):
        for k in range(3):
            cells.append(CellTruth(
                cid=f"{s + 1}{'abc'[k]}",
                antenna=AntennaSpec(site, (rot + 120.0 * k) % 360.0),
                p_t=float(-45.0 + rng.normal(0.0, 1.5)),
                kappa=float(3.2 + rng.normal(0.0, 0.1)),
            ))
    return cells


MULTICELL_BBOX = (0.0, 0.0, 3075.0, 4125.0)


def cell_fields(xy, layout, truth_tau, rng, min_dist=1.0):
    """Noiseless per-cell received power at ``xy``, one column per cell."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    xmin, ymin = xy.min(axis=0)
    xmax, ymax = xy.max(axis=0)
    basis = BasisSet(grid_centers((xmin, ymin, xmax, ymax), truth_tau), truth_tau)
    S = basis_matrix(xy, basis)
    out = np.empty((xy.shape[0], len(layout)))
    for j, cell in enumerate(layout):
        trend = TrendSpec(cell.antenna.site, cell.antenna, min_dist)
        alpha = np.array([cell.p_t, cell.kappa, cell.varsigma])
        eta = draw_eta(basis, cell.inv_beta, cell.phi, rng)
        out[:, j] = trend_matrix(xy, trend) @ alpha + S @ eta
    return out


def gen_multicell(layout, spec, noisy_selection=False):
    """Best-serving-cell measurements for a list of :class:`CellTruth`.

    The reported cell is the argmax of the noiseless fields (or of the noisy
    ones with ``noisy_selection``); the reported RSRP is that cell's noisy value.
    """
    if not layout:
        raise InvalidParameterError("layout needs at least one cell")
    rng = np.random.default_rng(spec.seed)
    xy = sample_locations(spec, rng)
    fields = cell_fields(xy, layout, spec.truth_tau, rng, spec.min_dist)
    noisy = fields + np.sqrt(spec.noise_var) * rng.standard_normal(fields.shape)
    pick = np.argmax(noisy if noisy_selection else fields, axis=1)
    cids = [c.cid for c in layout]
    value = noisy[np.arange(xy.shape[0]), pick]
    return MulticellSample(Measurements(xy, value, np.asarray(cids)[pick]), fields, cids)
