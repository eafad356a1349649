"""Bayesian synthetic likelihood: Gaussian summary likelihood and its MCMC sampler."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import rng as _rng
from .core import WeightedDraws, as_dataset
from .summaries import compute_many, compute_summary

DEFAULT_M = 50
JITTER = 1e-10


@dataclass(frozen=True)
class SyntheticLikelihood:
    """Monte Carlo mean and covariance of simulated summaries at one parameter."""

    mu: np.ndarray
    sigma: np.ndarray
    m: int
    chol: np.ndarray
    jittered: bool = False

    @property
    def dim(self):
        return self.mu.size


def _from_summaries(S):
    m, k = S.shape
    mu = S.mean(axis=0)
    centred = S - mu
    sigma = centred.T @ centred / (m - 1)
    sigma = 0.5 * (sigma + sigma.T)
    try:
        return SyntheticLikelihood(mu, sigma, m, np.linalg.cholesky(sigma))
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(sigma)))
    jitter = JITTER * scale if scale > 0 else JITTER
    sigma = sigma + jitter * np.eye(k)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("summary covariance not positive definite after jitter") from None
    return SyntheticLikelihood(mu, sigma, m, chol, jittered=True)


def estimate_synthetic_likelihood(model, theta, summary, m, seed):
    """Mean and ``1/(m-1)`` covariance of ``m`` simulated summaries at ``theta``.

    ``seed`` may be an integer or a ``numpy.random.Generator``. When the
    covariance is not positive definite a jitter of ``1e-10 * mean(diag)``
    is added to the diagonal and ``jittered`` is set.
    """
    if m < summary.dim + 2:
        raise ValueError(f"m = {m} simulations is too few for {summary.dim} summaries (need >= {summary.dim + 2})")
    theta = model.check_theta(theta)
    rng = _rng.make_rng(seed)
    S = compute_many(summary, model.simulate_many(np.tile(theta, (m, 1)), rng))
    return _from_summaries(S)


def synthetic_loglik(sl, s_obs):
    """Gaussian log-density of the observed summary under the synthetic likelihood."""
    s_obs = np.asarray(s_obs, dtype=float).ravel()
    if s_obs.size != sl.dim:
        raise ValueError(f"observed summary has length {s_obs.size}, synthetic likelihood {sl.dim}")
    chol = sl.chol
    if chol is None:
        chol = np.linalg.cholesky(sl.sigma)
    z = solve_triangular(chol, s_obs - sl.mu, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (sl.dim * math.log(2 * math.pi) + logdet + z @ z))


def bsl_mcmc(model, y, summary, m, chain_length, proposal_sd, seed, theta0=None,
             burn_in=0, refresh_current=False):
    """Random-walk Metropolis on the synthetic-likelihood posterior.

    The likelihood estimate of the current state is kept from the iteration
    that accepted it and reused in every later ratio; this is what makes the
    chain target the synthetic-likelihood posterior exactly.
    ``refresh_current=True`` re-estimates it each step instead and exists
    only so the retained-estimate behaviour can be regression-tested.
    """
    if chain_length < 1:
        raise ValueError("chain_length must be >= 1")
    p = model.dim
    sd = np.broadcast_to(np.asarray(proposal_sd, dtype=float), (p,)).copy()
    if not np.all(np.isfinite(sd)) or np.any(sd <= 0):
        raise ValueError(f"proposal sd must be strictly positive, got {sd}")
    y = as_dataset(y)
    s_obs = compute_summary(summary, y)
    prior = model.prior
    theta = model.prior.mean.copy() if theta0 is None else np.asarray(theta0, dtype=float).copy()
    theta = model.check_theta(theta)
    lp = float(prior.logpdf(theta))
    if not math.isfinite(lp):
        raise ValueError("initial parameter lies outside the prior support")

    rng_prop = _rng.make_rng(seed, _rng.BSL_PROPOSAL)
    rng_sim = _rng.make_rng(seed, _rng.BSL_SIMULATION)

    n_est = 0

    def loglik(th):
        nonlocal n_est
        n_est += 1
        return synthetic_loglik(estimate_synthetic_likelihood(model, th, summary, m, rng_sim), s_obs)

    ll = loglik(theta)
    chain = np.empty((chain_length, p))
    ll_trace = np.empty(chain_length)
    n_acc = 0
    for t in range(chain_length):
        prop = theta + sd * rng_prop.standard_normal(p)
        log_u = math.log(rng_prop.random())
        if refresh_current:
            ll = loglik(theta)
        lp_prop = float(prior.logpdf(prop))
        if math.isfinite(lp_prop):
            ll_prop = loglik(prop)
            if log_u < ll_prop + lp_prop - ll - lp:
                theta, lp, ll = prop, lp_prop, ll_prop
                n_acc += 1
        chain[t] = theta
        ll_trace[t] = ll
    meta = {
        "method": "bsl",
        "acceptance_rate": n_acc / chain_length,
        "m": int(m),
        "chain_length": int(chain_length),
        "burn_in": int(burn_in),
        "n_simulations": int(m) * n_est,
        "proposal_sd": sd.tolist(),
        "loglik_trace": ll_trace,
    }
    return WeightedDraws.equal(chain, meta=meta).discard(burn_in)
