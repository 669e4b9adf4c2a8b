"""File formats: measurement CSV, prediction grids, model and report JSON,
and the run configuration.

Measurement files are comma separated with the header ``x,y,rsrp`` or
``x,y,rsrp,cid``.  Blank lines and lines starting with ``#`` are skipped.
Floats are written with ``repr`` so every value reads back exactly.
"""

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .antenna import AntennaSpec
from .core import BasisSet, FittedModel, Measurements, ModelParams, TrendSpec
from .errors import InvalidParameterError, MissingModelError, ParseError
from .prediction import Grid

MODEL_SCHEMA = "frkrem.model/1"
CELLS_SCHEMA = "frkrem.cells/1"

MEASUREMENT_HEADERS = (("x", "y", "rsrp"), ("x", "y", "rsrp", "cid"))
GRID_HEADERS = (("x", "y", "z_hat", "var"), ("x", "y", "z_hat", "var", "cid_hat"))


def _fmt(v):
    return repr(float(v))


def _data_lines(path):
    """Yield ``(line_number, fields)`` of the non-blank, non-comment lines."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"{path}: cannot read: {exc.strerror}") from None
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            yield lineno, [c.strip() for c in row]


def _read_table(path, headers, n_float):
    lines = _data_lines(path)
    try:
        lineno, head = next(lines)
    except StopIteration:
        raise ParseError(f"{path}: empty file, expected header {','.join(headers[0])}") from None
    head = tuple(h.lower() for h in head)
    if head not in headers:
        raise ParseError(f"{path}:{lineno}: bad header {','.join(head)!r}, expected "
                         + " or ".join(",".join(h) for h in headers))
    ncol = len(head)
    nums, tags = [], []
    for lineno, row in lines:
        if len(row) != ncol:
            raise ParseError(f"{path}:{lineno}: expected {ncol} fields, got {len(row)}")
        vals = []
        for name, cell in zip(head[:n_float], row[:n_float]):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: field {name}={cell!r} is not a number") from None
            vals.append(v)
        nums.append(vals)
        if ncol > n_float:
            tags.append(row[n_float])
    arr = np.array(nums, dtype=np.float64).reshape(-1, n_float)
    return head, arr, (tags if ncol > n_float else None)


def read_measurements(path):
    """Parse a measurement CSV; rows keep their file order."""
    head, arr, cid = _read_table(path, MEASUREMENT_HEADERS, 3)
    bad = ~np.all(np.isfinite(arr), axis=1)
    if bad.any():
        raise ParseError(f"{path}: non-finite value in data row {int(np.argmax(bad)) + 1}")
    return Measurements(arr[:, :2], arr[:, 2], None if cid is None else np.array(cid, dtype=str))


def write_measurements(obs, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        has_cid = obs.cid is not None
        w.writerow(MEASUREMENT_HEADERS[has_cid])
        for i in range(len(obs)):
            row = [_fmt(obs.xy[i, 0]), _fmt(obs.xy[i, 1]), _fmt(obs.value[i])]
            if has_cid:
                row.append(str(obs.cid[i]))
            w.writerow(row)


def write_grid(grid, path):
    """One row per node, x fastest; uncovered multicell nodes have NaN values
    and an empty ``cid_hat``."""
    if grid.z_hat is None or grid.z_hat.size == 0:
        raise InvalidParameterError("empty grid")
    pts = grid.points()
    z = np.asarray(grid.z_hat).ravel()
    v = np.asarray(grid.var).ravel()
    cid = None if grid.cid_hat is None else np.asarray(grid.cid_hat).ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADERS[cid is not None])
        for i in range(pts.shape[0]):
            row = [_fmt(pts[i, 0]), _fmt(pts[i, 1]), _fmt(z[i]), _fmt(v[i])]
            if cid is not None:
                row.append(str(cid[i]))
            w.writerow(row)


def read_grid(path):
    """Inverse of :func:`write_grid` for a rectangular, row-major grid."""
    head, arr, cid = _read_table(path, GRID_HEADERS, 4)
    if arr.shape[0] == 0:
        raise ParseError(f"{path}: grid has no rows")
    xs = np.unique(arr[:, 0])
    ys = np.unique(arr[:, 1])
    shape = (ys.size, xs.size)
    if xs.size * ys.size != arr.shape[0]:
        raise ParseError(f"{path}: rows do not form a rectangular grid")
    grid = Grid(xs, ys, arr[:, 2].reshape(shape), arr[:, 3].reshape(shape))
    if cid is not None:
        grid.cid_hat = np.array(cid, dtype=str).reshape(shape)
    return grid


# --------------------------------------------------------------------------
# JSON artifacts
# --------------------------------------------------------------------------

def _clean(obj):
    """Convert numpy scalars/arrays so that json can encode them."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(obj):
    """Canonical JSON text (sorted keys, fixed indent, trailing newline)."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(obj, path):
    Path(path).write_text(dumps(obj))


def read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None


def model_to_dict(model):
    trend = model.trend
    return {
        "schema": MODEL_SCHEMA,
        "method": model.method,
        "params": model.params.to_dict(),
        "trend": {"tx": list(trend.tx), "min_dist": trend.min_dist,
                  "gain": None if trend.gain is None else trend.gain.to_dict()},
        "basis": {"tau": model.basis.tau, "r_max": model.basis.r_max,
                  "centers": model.basis.centers},
        "eta_mean": model.eta_mean,
        "eta_cov": model.eta_cov,
        "n_obs": model.n_obs,
        "loglik": model.loglik,
        "converged": model.converged,
    }


def model_from_dict(d):
    if d.get("schema") != MODEL_SCHEMA:
        raise ParseError(f"unsupported model schema {d.get('schema')!r}, expected {MODEL_SCHEMA}")
    try:
        t = d["trend"]
        gain = None if t["gain"] is None else AntennaSpec.from_dict(t["gain"])
        trend = TrendSpec(tuple(t["tx"]), gain, t["min_dist"])
        b = d["basis"]
        basis = BasisSet(np.array(b["centers"], dtype=float), b["tau"], b.get("r_max"))
        return FittedModel(
            params=ModelParams.from_dict(d["params"]), basis=basis, trend=trend,
            eta_mean=np.array(d["eta_mean"], dtype=float),
            eta_cov=np.array(d["eta_cov"], dtype=float).reshape(basis.r, basis.r),
            n_obs=int(d["n_obs"]), loglik=float(d["loglik"]),
            converged=bool(d["converged"]), method=d["method"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model artifact: {exc!r}") from None


def save_model(model, path):
    write_json(model_to_dict(model), path)


def _load_artifact(path, what):
    if not Path(path).is_file():
        raise MissingModelError(f"no {what} at {path}; run the corresponding fit command first")
    return read_json(path)


def load_model(path):
    return model_from_dict(_load_artifact(path, "fitted model"))


def save_cells(cells, path):
    write_json({"schema": CELLS_SCHEMA, "cells": [
        {"cid": c.cid, "antenna": c.antenna.to_dict(),
         "domain": None if c.domain is None else c.domain.to_dict(),
         "model": model_to_dict(c.fitted)} for c in cells]}, path)


def load_cells(path):
    from .multicell import CellDomain, CellModel

    d = _load_artifact(path, "multicell model set")
    if d.get("schema") != CELLS_SCHEMA:
        raise ParseError(f"unsupported schema {d.get('schema')!r}, expected {CELLS_SCHEMA}")
    out = []
    for c in d["cells"]:
        dom = None if c["domain"] is None else CellDomain(**c["domain"])
        out.append(CellModel(c["cid"], AntennaSpec.from_dict(c["antenna"]), dom,
                             model_from_dict(c["model"])))
    return out


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------

@dataclass
class AntennaEntry:
    cid: str
    site: list
    azimuth: float
    psi_3db: float = 65.0
    a_m: float = 30.0
    wedge: Optional[float] = 90.0
    max_radius: Optional[float] = None

    def spec(self):
        return AntennaSpec(tuple(self.site), self.azimuth, self.psi_3db, self.a_m)


@dataclass
class EmSettings:
    tol: float = 1e-5
    patience: int = 100
    max_iter: int = 5000
    backtrack_max: int = 50


@dataclass
class RunConfig:
    """Settings shared by the CLI commands; command-line flags override them.

    ``wedge`` is the half-angle (degrees) of a cell's coverage domain;
    ``null`` means the cell has no domain restriction.
    """

    tau: Optional[float] = None
    em: EmSettings = field(default_factory=EmSettings)
    min_dist: float = 1.0
    k_folds: int = 5
    seed: int = 0
    tx: Optional[list] = None
    antennas: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)

    def antenna_map(self):
        return {a.cid: a.spec() for a in self.antennas}


def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise ParseError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ParseError(f"{where}: unknown key(s) {', '.join(unknown)}")
    return data


def config_from_dict(data, where="config"):
    data = dict(_strict(RunConfig, data, where))
    if "em" in data:
        data["em"] = EmSettings(**_strict(EmSettings, data["em"], f"{where}.em"))
    if "antennas" in data:
        ants = []
        for i, a in enumerate(data["antennas"]):
            _strict(AntennaEntry, a, f"{where}.antennas[{i}]")
            try:
                ants.append(AntennaEntry(**a))
            except TypeError as exc:
                raise ParseError(f"{where}.antennas[{i}]: {exc}") from None
        data["antennas"] = ants
    if "outputs" in data and not isinstance(data["outputs"], dict):
        raise ParseError(f"{where}.outputs: expected an object")
    for key in ("tau", "min_dist"):
        v = data.get(key)
        if v is not None and not (isinstance(v, (int, float)) and math.isfinite(v)):
            raise ParseError(f"{where}.{key}: expected a number")
    return RunConfig(**data)


def load_config(path):
    return config_from_dict(read_json(path), str(path))


def antennas_from_layout(layout, wedge=90.0, max_radius=None):
    """Config entries for a list of synthetic :class:`~frkrem.synthetic.CellTruth`."""
    return [AntennaEntry(c.cid, list(c.antenna.site), c.antenna.azimuth,
                         c.antenna.psi_3db, c.antenna.a_m, wedge, max_radius)
            for c in layout]
