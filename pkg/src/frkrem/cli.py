"""Command-line driver.

Every command reads and writes plain files (see :mod:`frkrem.io`).  Flags
override values from ``--config``.  Structured outputs carry no timings, so a
seeded run produces the same bytes every time.

Exit status: 0 on success, 2 for usage errors, otherwise the code of the
error category in :data:`EXIT_CODES`.  Set ``FRKREM_LOG_LEVEL`` (e.g. INFO,
DEBUG) for progress messages on stderr.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from . import io as fio
from .core import TrendSpec, build_basis_set, build_design_matrices, check_trend_rank
from .em import EmConfig, fit_em
from .errors import FRKError, InvalidParameterError
from .evaluation import METHODS, cross_validate, rmse
from .moments import default_bin_count, estimate_moments, moments_model
from .multicell import CellDomain, cid_errors, fit_cells, predict_cid_grid
from .prediction import predict_grid, predict_points

log = logging.getLogger("frkrem")

EXIT_CODES = {
    "error": 1,
    "parse-error": 3,
    "missing-model": 4,
    "invalid-parameter": 5,
    "degenerate-design": 6,
    "empty-basis": 7,
    "singular-matrix": 8,
    "numerical-failure": 9,
}

SCENARIOS = ("lognormal", "correlated", "multicell")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: usage error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _setup_logging():
    level = os.environ.get("FRKREM_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _config(args):
    return fio.load_config(args.config) if args.config else fio.RunConfig()


def _em_config(args, cfg):
    em = cfg.em
    return EmConfig(
        tol=args.tol if args.tol is not None else em.tol,
        patience=args.patience if args.patience is not None else em.patience,
        max_iter=args.max_iter if args.max_iter is not None else em.max_iter,
        backtrack_max=em.backtrack_max)


def _tau(args, cfg):
    tau = args.tau if args.tau is not None else cfg.tau
    if tau is None:
        raise InvalidParameterError("tau not given (use --tau or the config file)")
    return float(tau)


def _trend(args, cfg, obs):
    tx = args.tx or cfg.tx
    if tx is None:
        xmin, ymin, xmax, ymax = obs.bbox()
        tx = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax))
        log.info("no transmitter position given, using the data centre %s", tx)
    return TrendSpec(tuple(tx), None, cfg.min_dist)


def _out(path, default):
    return path if path else default


def _say(*parts):
    print(*parts)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_simulate(args, cfg):
    from . import synthetic as syn

    seed = args.seed if args.seed is not None else cfg.seed
    if args.scenario == "multicell":
        step = args.grid_step or 50.0
        spec = syn.ScenarioSpec(bbox=syn.MULTICELL_BBOX, n_points=None, grid_step=step,
                                truth_tau=150.0, noise_var=args.noise_var, seed=seed)
        layout = syn.default_layout(seed)
        obs = syn.gen_multicell(layout, spec).obs
        run_cfg = fio.RunConfig(tau=150.0, seed=seed, min_dist=cfg.min_dist,
                                antennas=fio.antennas_from_layout(layout))
        cfg_path = _out(args.config_out, "simulated_config.json")
        fio.write_json(_config_dict(run_cfg), cfg_path)
        _say(f"wrote config {cfg_path}")
    else:
        spec = syn.ScenarioSpec(n_points=None if args.grid_step else args.n_points,
                                grid_step=args.grid_step, noise_var=args.noise_var,
                                seed=seed)
        obs = syn.gen_lognormal(spec) if args.scenario == "lognormal" else syn.gen_correlated(spec)
    fio.write_measurements(obs, args.out)
    _say(f"wrote {len(obs)} measurements to {args.out}")
    return 0


def _config_dict(cfg):
    from dataclasses import asdict
    return asdict(cfg)


def cmd_fit(args, cfg):
    obs = fio.read_measurements(args.data)
    tau = _tau(args, cfg)
    trend = _trend(args, cfg, obs)
    basis = build_basis_set(obs.bbox(), tau, obs.xy)
    model, trace = fit_em(obs, basis, trend, _em_config(args, cfg), warn=False)
    if not trace.converged:
        log.warning(trace.warning)
    model_path = _out(args.model, "model.json")
    trace_path = _out(args.trace, "em_trace.json")
    fio.save_model(model, model_path)
    fio.write_json(trace.to_dict(), trace_path)
    p = model.params
    _say(f"N={len(obs)} r={basis.r} iterations={trace.n_iter} converged={trace.converged}")
    _say(f"alpha={p.alpha.tolist()} sigma2={p.sigma2!r} beta={p.beta!r} phi={p.phi!r}")
    _say(f"wrote {model_path} and {trace_path}")
    return 0


def cmd_fit_moments(args, cfg):
    obs = fio.read_measurements(args.data)
    tau = _tau(args, cfg)
    trend = _trend(args, cfg, obs)
    basis = build_basis_set(obs.bbox(), tau, obs.xy)
    dm = build_design_matrices(obs, basis, trend)
    M = args.bins or default_bin_count(basis.r, len(obs))
    result = estimate_moments(obs, dm, M, repair=args.repair)
    diag = result.diagnostics
    report = {"r": basis.r, "M": M, "M_used": int(result.sigma_hat_M.shape[0]),
              "sigma2_hat": result.sigma2_hat, "repaired": result.repaired,
              "diagnostics": diag.to_dict()}
    report_path = _out(args.report, "prop1_report.json")
    if diag.k_hat_pd or result.repaired:
        model_path = _out(args.model, "model_moments.json")
        fio.save_model(moments_model(obs, dm, result, trend), model_path)
        report["model"] = model_path
    else:
        report["model"] = None
        log.warning("K_hat is not positive definite; no model written")
    fio.write_json(report, report_path)
    _say(f"r={basis.r} M={report['M_used']} sigma2_hat={result.sigma2_hat!r}")
    _say(f"K_hat positive definite: {diag.k_hat_pd} (margin {diag.k_hat_margin!r})")
    _say(f"wrote {report_path}")
    return 0


def _bbox(args, fallback=None):
    if args.bbox:
        return tuple(args.bbox)
    if args.data:
        return fio.read_measurements(args.data).bbox()
    if fallback is not None:
        return fallback
    raise InvalidParameterError("no prediction area: give --bbox or --data")


def cmd_predict(args, cfg):
    model = fio.load_model(_out(args.model, "model.json"))
    noise = model.params.sigma2 if args.add_noise else 0.0
    if args.points:
        pts = fio.read_measurements(args.points)
        z, var = predict_points(pts.xy, model)
        out = {"x": pts.xy[:, 0], "y": pts.xy[:, 1], "z_hat": z, "var": var + noise,
               "rmse": rmse(z, pts.value)}
        path = _out(args.out, "predictions.json")
        fio.write_json(out, path)
        _say(f"rmse={out['rmse']!r} over {len(pts)} points; wrote {path}")
        return 0
    grid = predict_grid(_bbox(args), args.resolution, model)
    grid.var = grid.var + noise
    path = _out(args.out, "grid.csv")
    fio.write_grid(grid, path)
    _say(f"wrote {grid.shape[1]}x{grid.shape[0]} grid to {path}")
    return 0


def cmd_crossval(args, cfg):
    obs = fio.read_measurements(args.data)
    k = args.k if args.k is not None else cfg.k_folds
    seed = args.seed if args.seed is not None else cfg.seed
    tau = _tau(args, cfg) if args.method == "frk" else None
    trend = _trend(args, cfg, obs)
    report = cross_validate(obs, args.method, k, seed, tau=tau, trend=trend,
                            config=_em_config(args, cfg), n_jobs=args.n_jobs)
    path = _out(args.report, "cv_report.json")
    fio.write_json(report.to_dict(timing=args.timing), path)
    _say(f"{args.method}: mean RMSE {report.mean!r} (std {report.std!r}) over "
         f"{k - len(report.failed)}/{k} folds")
    _say(f"wrote {path}")
    return 0 if len(report.failed) < k else EXIT_CODES["numerical-failure"]


def _domains(cfg, use_domains):
    if not use_domains:
        return None
    out = {}
    for a in cfg.antennas:
        if a.wedge is not None or a.max_radius is not None:
            out[a.cid] = CellDomain(a.wedge if a.wedge is not None else 180.0, a.max_radius)
    return out


def cmd_multicell_fit(args, cfg):
    obs = fio.read_measurements(args.data)
    if obs.cid is None:
        raise InvalidParameterError(f"{args.data} has no cid column")
    antennas = cfg.antenna_map()
    if not antennas:
        raise InvalidParameterError("no antennas configured (the config file needs an antennas list)")
    missing = sorted(set(obs.cid) - set(antennas))
    if missing:
        raise InvalidParameterError(f"measurements name unconfigured cells: {', '.join(missing)}")
    tau = _tau(args, cfg)
    cells = fit_cells(obs, antennas, tau, domains=_domains(cfg, not args.no_domains),
                      config=_em_config(args, cfg), directional=not args.omni,
                      bbox=tuple(args.bbox) if args.bbox else None,
                      min_dist=cfg.min_dist, n_jobs=args.n_jobs)
    model_path = _out(args.model, "cells.json")
    trace_path = _out(args.trace, "cell_traces.json")
    fio.save_cells(cells, model_path)
    fio.write_json({c.cid: c.trace.to_dict() for c in cells}, trace_path)
    for c in cells:
        _say(f"cell {c.cid}: N={c.fitted.n_obs} r={c.fitted.basis.r} "
             f"converged={c.trace.converged}")
    _say(f"wrote {model_path} and {trace_path}")
    return 0


def cmd_multicell_predict(args, cfg):
    cells = fio.load_cells(_out(args.model, "cells.json"))
    if args.test:
        test = fio.read_measurements(args.test)
        if test.cid is None:
            raise InvalidParameterError(f"{args.test} has no cid column")
        res = cid_errors(test, cells)
        path = _out(args.report, "cid_report.json")
        fio.write_json(res, path)
        _say(f"CID error rate {res['rate']!r} ({res['errors']}/{res['n']}, "
             f"{res['uncovered']} uncovered); wrote {path}")
        if not (args.bbox or args.data):
            return 0
    grid = predict_cid_grid(_bbox(args), args.resolution, cells)
    path = _out(args.out, "cid_grid.csv")
    fio.write_grid(grid, path)
    _say(f"wrote {grid.shape[1]}x{grid.shape[0]} grid to {path}")
    return 0


def cmd_diagnose(args, cfg):
    obs = fio.read_measurements(args.data)
    trend = _trend(args, cfg, obs)
    out = {"n": len(obs), "bbox": list(obs.bbox()), "tx": list(trend.tx)}
    from .core import trend_matrix
    T = trend_matrix(obs.xy, trend)
    check_trend_rank(T)
    out["trend_condition"] = float(np.linalg.cond(T.T @ T))
    if args.tau is not None or cfg.tau is not None:
        tau = _tau(args, cfg)
        basis = build_basis_set(obs.bbox(), tau, obs.xy)
        dm = build_design_matrices(obs, basis, trend)
        support = np.count_nonzero(dm.S, axis=0)
        out["basis"] = {"tau": tau, "r": basis.r, "r_max": basis.r_max,
                        "min_support": int(support.min()),
                        "median_support": float(np.median(support))}
    if args.model:
        model = fio.load_model(args.model)
        z, _ = predict_points(obs.xy, model)
        out["model"] = {"method": model.method, "params": model.params.to_dict(),
                        "r": model.basis.r, "loglik": model.loglik,
                        "converged": model.converged,
                        "in_sample_rmse": rmse(z, obs.value)}
    path = _out(args.report, "diagnose.json")
    fio.write_json(out, path)
    _say(f"wrote {path}")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _em_flags(p):
    p.add_argument("--tau", type=float, help="basis support radius in metres")
    p.add_argument("--max-iter", type=int, help="EM iteration cap")
    p.add_argument("--tol", type=float, help="EM parameter-change tolerance")
    p.add_argument("--patience", type=int, help="iterations below tol before stopping")


def build_parser():
    parser = _Parser(prog="frkrem", description="Radio coverage maps by Fixed Rank Kriging.")
    parser.add_argument("--version", action="version", version=f"frkrem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run configuration")
        p.set_defaults(func=func)
        return p

    p = command("simulate", cmd_simulate, "generate a synthetic measurement file")
    p.add_argument("--scenario", choices=SCENARIOS, default="correlated")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-points", type=int, default=2000)
    p.add_argument("--grid-step", type=float)
    p.add_argument("--noise-var", type=float, default=3.0)
    p.add_argument("--out", required=True)
    p.add_argument("--config-out", help="antenna config written by the multicell scenario")

    p = command("fit", cmd_fit, "fit an FRK model by EM")
    p.add_argument("--data", required=True)
    p.add_argument("--tx", type=float, nargs=2, metavar=("X", "Y"))
    _em_flags(p)
    p.add_argument("--model")
    p.add_argument("--trace")

    p = command("fit-moments", cmd_fit_moments, "method-of-moments fit with diagnostics")
    p.add_argument("--data", required=True)
    p.add_argument("--tx", type=float, nargs=2, metavar=("X", "Y"))
    p.add_argument("--tau", type=float)
    p.add_argument("--bins", type=int, help="number of bins M (default 4r)")
    p.add_argument("--repair", action="store_true", help="lift K_hat to positive definite")
    p.add_argument("--model")
    p.add_argument("--report")

    p = command("predict", cmd_predict, "predict a coverage grid from a fitted model")
    p.add_argument("--model")
    p.add_argument("--bbox", type=float, nargs=4, metavar=("XMIN", "YMIN", "XMAX", "YMAX"))
    p.add_argument("--data", help="take the grid area from this measurement file")
    p.add_argument("--points", help="predict at the locations of this measurement file")
    p.add_argument("--resolution", type=float, default=10.0)
    p.add_argument("--add-noise", action="store_true",
                   help="report the variance of Y (adds sigma^2) instead of Z")
    p.add_argument("--out")

    p = command("crossval", cmd_crossval, "k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=METHODS, default="frk")
    p.add_argument("--tx", type=float, nargs=2, metavar=("X", "Y"))
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="include fold timings in the report")
    _em_flags(p)
    p.add_argument("--report")

    p = command("multicell-fit", cmd_multicell_fit, "fit one model per cell")
    p.add_argument("--data", required=True)
    p.add_argument("--bbox", type=float, nargs=4, metavar=("XMIN", "YMIN", "XMAX", "YMAX"))
    p.add_argument("--omni", action="store_true", help="leave the antenna gain out of the trend")
    p.add_argument("--no-domains", action="store_true", help="ignore the coverage wedges")
    p.add_argument("--n-jobs", type=int, default=1)
    _em_flags(p)
    p.add_argument("--model")
    p.add_argument("--trace")

    p = command("multicell-predict", cmd_multicell_predict, "best serving cell map")
    p.add_argument("--model")
    p.add_argument("--bbox", type=float, nargs=4, metavar=("XMIN", "YMIN", "XMAX", "YMAX"))
    p.add_argument("--data", help="take the grid area from this measurement file")
    p.add_argument("--test", help="measurements with cid to score the prediction on")
    p.add_argument("--resolution", type=float, default=25.0)
    p.add_argument("--out")
    p.add_argument("--report")

    p = command("diagnose", cmd_diagnose, "design and basis diagnostics for a data set")
    p.add_argument("--data", required=True)
    p.add_argument("--tx", type=float, nargs=2, metavar=("X", "Y"))
    p.add_argument("--tau", type=float)
    p.add_argument("--model")
    p.add_argument("--report")
    return parser


def run_command(argv=None):
    """Run one command; returns the exit status instead of exiting."""
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, _config(args))
    except FRKError as exc:
        print(f"frkrem: {exc.category}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        print(f"frkrem: io-error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
