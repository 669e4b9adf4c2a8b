"""Maximum-likelihood fitting of the FRK model by EM.

The latent variable is the basis weight vector ``eta``.  One sweep runs the
E-step, then coordinate M-steps in the order alpha, sigma2, beta, phi.  The
first three are closed form; phi takes one damped Newton step whose length is
halved until the expected complete-data log-likelihood ``Q`` does not
decrease.  Every sub-step therefore satisfies ``Q(new; old) >= Q(old; old)``
and the observed-data log-likelihood is non-decreasing.

``Q`` here includes the ``-(N + r)/2 log(2 pi)`` constant, so
``Q(theta; theta) - H(theta; theta)`` equals :func:`core.log_likelihood`.
"""

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from .core import (LOG_2PI, LowRankSigma, Measurements, ModelParams,
                   build_design_matrices, cho_inverse, cho_solve, cholesky,
                   ktilde_factor, log_likelihood, ols)
from .errors import NumericalFailure

log = logging.getLogger(__name__)


@dataclass
class EmConfig:
    tol: float = 1e-5
    patience: int = 100
    max_iter: int = 5000
    backtrack_max: int = 50
    phi_over_tau_init: float = 5.0
    sigma2_floor: float = 1e-6
    inv_beta_floor: float = 1e-6
    # computing log L each sweep costs one extra O(Nr) solve
    track_loglik: bool = True

    def __post_init__(self):
        for name in ("tol", "patience", "max_iter", "backtrack_max",
                     "phi_over_tau_init", "sigma2_floor", "inv_beta_floor"):
            if getattr(self, name) < 0 or (name != "tol" and getattr(self, name) == 0):
                raise ValueError(f"EmConfig.{name} must be positive")


@dataclass
class PosteriorEta:
    """Conditional mean and covariance of eta given the data."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def second_moment(self):
        return self.cov + np.outer(self.mean, self.mean)


@dataclass
class EmRecord:
    iteration: int
    theta: dict
    q: float
    loglik: float
    step: float


@dataclass
class EmTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0
    warning: str = ""

    @property
    def loglik(self):
        return np.array([r.loglik for r in self.records])

    def to_dict(self):
        return {"converged": self.converged, "n_iter": self.n_iter,
                "warning": self.warning,
                "records": [asdict(r) for r in self.records]}


def _response(obs):
    return obs.value if isinstance(obs, Measurements) else np.asarray(obs, dtype=float)


# --------------------------------------------------------------------------
# initialisation and E-step
# --------------------------------------------------------------------------

def init_params(obs, dm, tau, config=None):
    """OLS trend, near-diagonal correlation, residual variance split evenly."""
    config = config or EmConfig()
    y = _response(obs)
    alpha = ols(dm.T, y)
    v = float(np.var(y - dm.T @ alpha))
    sigma2 = max(v / 2.0, config.sigma2_floor)
    inv_beta = max(v / 2.0, config.inv_beta_floor)
    phi = float(np.log(tau / config.phi_over_tau_init))
    return ModelParams(alpha, sigma2, 1.0 / inv_beta, phi)


def e_step(obs, dm, params, lowrank=None):
    """Posterior of eta: mean ``(S^T S + s2 K^-1)^-1 S^T e``, cov ``(S^T S/s2 + K^-1)^-1``."""
    y = _response(obs)
    lr = lowrank or LowRankSigma(dm, params)
    resid = y - dm.T @ params.alpha
    mean = cho_solve(lr.inner_cf, dm.S.T @ resid)
    cov = params.sigma2 * cho_inverse(lr.inner_cf)
    cov = 0.5 * (cov + cov.T)
    return PosteriorEta(mean, cov)


# --------------------------------------------------------------------------
# Q function
# --------------------------------------------------------------------------

def _q_cov_terms(beta, phi, V, basis):
    """The part of Q depending on (beta, phi): -1/2 log det K - 1/2 tr(K^-1 V)."""
    fac = ktilde_factor(basis, phi)
    logdet_K = fac.logdet - basis.r * np.log(beta)
    tr = float(np.sum(fac.inv * V))
    return -0.5 * logdet_K - 0.5 * beta * tr


def q_value(theta, eta, obs, dm):
    """Expected complete-data log-likelihood for a given posterior of eta."""
    y = _response(obs)
    n, r = dm.n, dm.basis.r
    V = eta.second_moment
    resid = y - dm.T @ theta.alpha
    s2 = theta.sigma2
    data = (-0.5 * n * np.log(s2) - 0.5 * float(resid @ resid) / s2
            - 0.5 * float(np.sum(dm.StS * V)) / s2
            + float(resid @ (dm.S @ eta.mean)) / s2)
    return data + _q_cov_terms(theta.beta, theta.phi, V, dm.basis) - 0.5 * (n + r) * LOG_2PI


def q_function(theta, theta_tilde, obs, dm):
    """``Q(theta; theta_tilde)`` with the posterior taken at ``theta_tilde``."""
    return q_value(theta, e_step(obs, dm, theta_tilde), obs, dm)


# --------------------------------------------------------------------------
# M-steps
# --------------------------------------------------------------------------

def update_alpha(obs, dm, eta):
    return ols(dm.T, _response(obs) - dm.S @ eta.mean)


def update_sigma2(obs, dm, alpha_next, eta, floor=0.0):
    y = _response(obs)
    resid = y - dm.T @ alpha_next - dm.S @ eta.mean
    val = (float(resid @ resid) + float(np.sum(dm.StS * eta.cov))) / dm.n
    return max(val, floor)


def update_beta(eta, K_tilde, inv_beta_floor=0.0):
    """``r / tr(Ktilde^-1 E[eta eta^T])``, capped so that 1/beta >= floor.

    ``K_tilde`` is the correlation matrix itself or a cached factor of it.
    """
    if hasattr(K_tilde, "inv"):
        K_inv = K_tilde.inv
    else:
        K_inv = cho_inverse(cholesky(K_tilde, "Ktilde"))
    r = K_inv.shape[0]
    tr = float(np.sum(K_inv * eta.second_moment))
    if not tr > 0:
        raise NumericalFailure(f"non-positive trace {tr} in beta update")
    beta = r / tr
    if inv_beta_floor > 0:
        beta = min(beta, 1.0 / inv_beta_floor)
    return beta


def phi_derivatives(phi, beta, V, basis):
    """Newton quantities for phi at fixed beta and second moment ``V``.

    Returns ``(g, H, dq)`` where ``g = tr((beta A V - I) A (Delta o Kt))`` with
    ``A = Kt^-1``, ``H`` is the Newton denominator (``g / H == dQ/dphi / d2Q/dphi2``)
    and ``dq = exp(-phi) g / 2`` is the exact derivative of Q in phi.
    """
    r = basis.r
    Delta = basis.distances
    fac = ktilde_factor(basis, phi)
    Kt, A = fac.Kt, fac.inv
    D = Delta * Kt
    E = Delta * D
    I = np.eye(r)
    AV = A @ V
    AD = A @ D
    B = beta * AV - I
    # tr(X @ Y) as sum(X * Y.T) avoids the r^3 product
    g = float(np.sum(B * AD.T))
    e = np.exp(-phi)
    H = (-g + e * float(np.sum((A @ E) * B.T))
         + e * float(np.sum((AD @ AD) * (I - 2.0 * beta * AV).T)))
    return float(g), float(H), float(0.5 * e * g)


def update_phi(params, eta, basis, config=None):
    """Damped Newton step on phi; returns ``(phi_next, step)``.

    ``params`` carries the already-updated alpha, sigma2 and beta.  The step
    ``a`` starts at 1 and is halved until Q does not decrease; after
    ``backtrack_max`` halvings phi is kept (``a = 0``).
    """
    config = config or EmConfig()
    V = eta.second_moment
    g, H, _ = phi_derivatives(params.phi, params.beta, V, basis)
    if H == 0.0 or not np.isfinite(H) or g == 0.0:
        return params.phi, 0.0
    if H > 0:
        # not locally concave: a Newton step would descend; flip to ascent
        H = -H
    q0 = _q_cov_terms(params.beta, params.phi, V, basis)
    a = 1.0
    for _ in range(config.backtrack_max + 1):
        cand = params.phi - a * g / H
        try:
            q1 = _q_cov_terms(params.beta, cand, V, basis)
        except NumericalFailure:
            q1 = -np.inf
        if q1 >= q0:
            return float(cand), a
        a *= 0.5
    return params.phi, 0.0


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

def em_sweep(obs, dm, params, config, lowrank=None):
    """One EM iteration; returns ``(new_params, posterior, Q(new; old), step)``."""
    lr = lowrank or LowRankSigma(dm, params)
    eta = e_step(obs, dm, params, lr)
    alpha = update_alpha(obs, dm, eta)
    sigma2 = update_sigma2(obs, dm, alpha, eta, config.sigma2_floor)
    beta = update_beta(eta, ktilde_factor(dm.basis, params.phi), config.inv_beta_floor)
    partial = ModelParams(alpha, sigma2, beta, params.phi)
    phi, step = update_phi(partial, eta, dm.basis, config)
    new = partial.copy(phi=phi)
    return new, eta, q_value(new, eta, obs, dm), step


def run_em(obs, dm, params, config=None, warn=True):
    """Iterate EM from ``params`` on prepared design matrices.

    Non-convergence is always recorded on the trace; ``warn=False`` skips the
    RuntimeWarning (callers that fit from worker threads report it themselves).
    """
    config = config or EmConfig()
    trace = EmTrace()
    lr = LowRankSigma(dm, params)
    y = _response(obs)

    def loglik(lr_, p):
        if not config.track_loglik:
            return float("nan")
        resid = y - dm.T @ p.alpha
        return float(-0.5 * lr_.logdet_sigma() - 0.5 * resid @ lr_.solve(resid)
                     - 0.5 * dm.n * LOG_2PI)

    trace.records.append(EmRecord(0, params.to_dict(), float("nan"), loglik(lr, params), 0.0))
    quiet = 0
    for it in range(1, config.max_iter + 1):
        new, _, q, step = em_sweep(obs, dm, params, config, lr)
        lr = LowRankSigma(dm, new)
        trace.records.append(EmRecord(it, new.to_dict(), float(q), loglik(lr, new), step))
        delta = float(np.linalg.norm(new.as_vector() - params.as_vector()))
        params = new
        quiet = quiet + 1 if delta < config.tol else 0
        trace.n_iter = it
        if quiet >= config.patience:
            trace.converged = True
            break
    if not trace.converged:
        trace.warning = f"EM did not converge in {config.max_iter} iterations"
        if warn:
            warnings.warn(trace.warning, RuntimeWarning, stacklevel=2)
    log.info("EM stopped after %d iterations (converged=%s)", trace.n_iter, trace.converged)
    return params, trace


def fit_em(obs, basis, spec, config=None, init=None, warn=True):
    """Fit (alpha, sigma2, beta, phi) by EM and return ``(FittedModel, EmTrace)``."""
    from .prediction import condition

    config = config or EmConfig()
    dm = build_design_matrices(obs, basis, spec)
    params = init if init is not None else init_params(obs, dm, basis.tau, config)
    params, trace = run_em(obs, dm, params, config, warn)
    model = condition(obs, dm, params, spec)
    model.converged = trace.converged
    model.loglik = log_likelihood(_response(obs), dm, params)
    return model, trace
