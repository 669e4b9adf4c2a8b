"""Dense reference computations and random problem instances for the tests.

The oracles work with the full N x N covariance of the observations and
plain Gaussian conditioning, independently of the low-rank code paths.
"""

import numpy as np
from scipy import stats

from frkrem.core import (BasisSet, Measurements, ModelParams, TrendSpec,
                         build_design_matrices)


def random_instance(rng, n=40, r=5, tau=None, extent=100.0, antenna=None):
    """Random locations, centers, parameters and data drawn from the model."""
    tau = tau or 0.6 * extent
    xy = rng.uniform(0.0, extent, (n, 2))
    centers = rng.uniform(0.1 * extent, 0.9 * extent, (r, 2))
    basis = BasisSet(centers, tau)
    trend = TrendSpec((extent * 1.3, -0.2 * extent), antenna)
    p = trend.p
    alpha = np.concatenate([[-40.0, 2.5], [0.8] * (p - 2)]) + rng.normal(0, 0.1, p)
    params = ModelParams(alpha, rng.uniform(0.5, 2.0), rng.uniform(0.2, 2.0),
                         np.log(rng.uniform(0.2, 1.0) * extent))
    y = rng.normal(-60.0, 5.0, n)
    obs = Measurements(xy, y)
    dm = build_design_matrices(obs, basis, trend)
    K = dense_K(basis, params)
    eta = np.linalg.cholesky(K) @ rng.standard_normal(r)
    y = dm.T @ alpha + dm.S @ eta + np.sqrt(params.sigma2) * rng.standard_normal(n)
    obs = Measurements(xy, y)
    return obs, basis, trend, params, build_design_matrices(obs, basis, trend)


def dense_K(basis, params):
    c = basis.centers
    D = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
    return np.exp(-D / np.exp(params.phi)) / params.beta


def dense_sigma(dm, params):
    K = dense_K(dm.basis, params)
    return params.sigma2 * np.eye(dm.n) + dm.S @ K @ dm.S.T


def dense_loglik(y, dm, params):
    mean = dm.T @ params.alpha
    return float(stats.multivariate_normal(mean, dense_sigma(dm, params)).logpdf(y))


def dense_eta_posterior(y, dm, params):
    """Conditional law of eta given Y from the joint Gaussian (eta, Y)."""
    K = dense_K(dm.basis, params)
    Sig = dense_sigma(dm, params)
    C = K @ dm.S.T
    mean = C @ np.linalg.solve(Sig, y - dm.T @ params.alpha)
    cov = K - C @ np.linalg.solve(Sig, C.T)
    return mean, cov


def dense_predict(s0, t0, y, dm, params):
    """Conditional mean and covariance of Z at points with basis rows ``s0``."""
    K = dense_K(dm.basis, params)
    Sig = dense_sigma(dm, params)
    C = s0 @ K @ dm.S.T
    mean = t0 @ params.alpha + C @ np.linalg.solve(Sig, y - dm.T @ params.alpha)
    cov = s0 @ K @ s0.T - C @ np.linalg.solve(Sig, C.T)
    return mean, cov


def dense_q(theta, theta_tilde, y, dm):
    """E[log p(Y, eta; theta) | Y; theta_tilde] by direct Gaussian algebra."""
    m, P = dense_eta_posterior(y, dm, theta_tilde)
    n, r = dm.n, dm.basis.r
    K = dense_K(dm.basis, theta)
    e = y - dm.T @ theta.alpha - dm.S @ m
    data = (-0.5 * n * np.log(2 * np.pi * theta.sigma2)
            - 0.5 * (e @ e + np.trace(dm.S @ P @ dm.S.T)) / theta.sigma2)
    _, logdet = np.linalg.slogdet(K)
    Kinv = np.linalg.inv(K)
    prior = -0.5 * r * np.log(2 * np.pi) - 0.5 * logdet - 0.5 * np.trace(Kinv @ (P + np.outer(m, m)))
    return data + prior


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


CLI_PIPELINE = [
    "simulate --scenario correlated --seed 1 --n-points 600 --out {d}/data.csv",
    "simulate --scenario lognormal --seed 2 --n-points 300 --out {d}/logn.csv",
    "fit --data {d}/data.csv --tau 200 --max-iter 60 --model {d}/model.json --trace {d}/trace.json",
    "fit-moments --data {d}/data.csv --tau 200 --model {d}/mm.json --report {d}/prop1.json",
    "predict --model {d}/model.json --bbox 0 0 1000 1000 --resolution 50 --out {d}/grid.csv",
    "predict --model {d}/model.json --points {d}/logn.csv --out {d}/points.json",
    "crossval --data {d}/data.csv --method frk --tau 200 --k 5 --seed 1 --max-iter 40 "
    "--n-jobs 3 --report {d}/cv_frk.json",
    "crossval --data {d}/data.csv --method lognormal --k 5 --seed 1 --report {d}/cv_logn.json",
    "simulate --scenario multicell --seed 3 --grid-step 150 --out {d}/mc.csv "
    "--config-out {d}/mc.json",
    "multicell-fit --data {d}/mc.csv --config {d}/mc.json --max-iter 20 --n-jobs 4 "
    "--model {d}/cells.json --trace {d}/cell_traces.json",
    "multicell-predict --model {d}/cells.json --test {d}/mc.csv --report {d}/cid.json "
    "--bbox 0 0 3075 4125 --resolution 150 --out {d}/cid_grid.csv",
    "diagnose --data {d}/data.csv --tau 200 --model {d}/model.json --report {d}/diagnose.json",
]


def run_cli_pipeline(workdir):
    """Run every CLI command into ``workdir``; returns exit codes and file bytes."""
    from frkrem.cli import run_command

    codes = [run_command(cmd.format(d=workdir).split()) for cmd in CLI_PIPELINE]
    files = {p.name: p.read_bytes() for p in sorted(workdir.iterdir())}
    return codes, files
