"""Pseudo-marginal Metropolis-Hastings with an unbiased likelihood estimator."""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import rng as _rng
from .core import WeightedDraws

DEFAULT_PILOT_BUDGET = 1000


@dataclass(frozen=True)
class UnbiasedEstimator:
    """Nonnegative unbiased estimator of a likelihood.

    ``log_estimate(theta, rng)`` returns the log of one estimate, drawing
    its auxiliary randomness from ``rng``; ``-inf`` encodes an estimate of
    exactly zero. ``n_aux`` is the number of auxiliary draws per call and is
    informational only.
    """

    log_estimate: Callable
    n_aux: int = 1
    name: str = "estimator"

    def __call__(self, theta, rng):
        v = float(self.log_estimate(np.asarray(theta, dtype=float), rng))
        if math.isnan(v) or v == math.inf:
            raise ValueError(f"estimator {self.name!r} returned {v} at theta={theta}")
        return v


def exact_estimator(log_likelihood):
    """The noiseless estimator that returns the likelihood itself."""
    return UnbiasedEstimator(lambda theta, rng: log_likelihood(theta), n_aux=0, name="exact")


def lognormal_noise_estimator(log_likelihood, omega):
    """Exact likelihood times ``LN(-omega^2 / 2, omega^2)`` noise, which has mean one."""
    omega = float(omega)
    if omega < 0:
        raise ValueError("omega must be >= 0")

    def log_est(theta, rng):
        return log_likelihood(theta) - 0.5 * omega**2 + omega * rng.standard_normal()

    return UnbiasedEstimator(log_est, n_aux=1, name=f"lognormal(omega={omega:g})")


def _sd_vector(proposal_sd, p):
    sd = np.broadcast_to(np.asarray(proposal_sd, dtype=float), (p,)).copy()
    if not np.all(np.isfinite(sd)) or np.any(sd <= 0):
        raise ValueError(f"proposal sd must be strictly positive, got {sd}")
    return sd


def pm_mh(prior, est, proposal_sd, chain_length, seed, theta0=None, burn_in=0,
          pilot_budget=DEFAULT_PILOT_BUDGET):
    """Random-walk pseudo-marginal Metropolis-Hastings.

    The estimate attached to the current state is kept until a proposal is
    accepted; it is never re-drawn. A zero estimate at a proposal is an
    automatic rejection. Without ``theta0`` the chain starts at the prior
    mean, falling back to prior draws (at most ``pilot_budget``) until an
    estimate is positive.

    ``meta["log_estimates"]`` holds the log-estimate carried by each state.
    """
    if chain_length < 1:
        raise ValueError("chain_length must be >= 1")
    p = prior.dim
    sd = _sd_vector(proposal_sd, p)
    rng_prop = _rng.make_rng(seed, _rng.PM_PROPOSAL)
    rng_est = _rng.make_rng(seed, _rng.PM_ESTIMATOR)

    if theta0 is not None:
        theta = np.asarray(theta0, dtype=float).reshape(p)
        candidates = [theta]
    else:
        rng_init = _rng.make_rng(seed, _rng.INIT)
        candidates = [prior.mean]
        candidates += list(prior.sample(rng_init, max(0, pilot_budget - 1)))
    for theta in candidates:
        lp = float(prior.logpdf(theta))
        if not math.isfinite(lp):
            continue
        log_h = est(theta, rng_est)
        if log_h > -math.inf:
            break
    else:
        raise RuntimeError(f"no positive likelihood estimate in {len(candidates)} initialization attempts")
    theta = np.array(theta, dtype=float)

    chain = np.empty((chain_length, p))
    trace = np.empty(chain_length)
    n_acc = 0
    for t in range(chain_length):
        prop = theta + sd * rng_prop.standard_normal(p)
        log_u = math.log(rng_prop.random())
        lp_prop = float(prior.logpdf(prop))
        if math.isfinite(lp_prop):
            log_h_prop = est(prop, rng_est)
            if log_h_prop > -math.inf and log_u < log_h_prop + lp_prop - log_h - lp:
                theta, lp, log_h = prop, lp_prop, log_h_prop
                n_acc += 1
        chain[t] = theta
        trace[t] = log_h
    meta = {
        "method": "pm-mh",
        "acceptance_rate": n_acc / chain_length,
        "chain_length": int(chain_length),
        "burn_in": int(burn_in),
        "proposal_sd": sd.tolist(),
        "estimator": est.name,
        "log_estimates": trace,
    }
    return WeightedDraws.equal(chain, meta=meta).discard(burn_in)


def rw_metropolis(prior, log_likelihood, proposal_sd, chain_length, seed, theta0, burn_in=0):
    """Plain random-walk Metropolis on ``prior x likelihood``.

    Draws proposals from the same stream as :func:`pm_mh`, so a pseudo-marginal
    chain with a noiseless estimator coincides with it step for step.
    """
    p = prior.dim
    sd = _sd_vector(proposal_sd, p)
    rng_prop = _rng.make_rng(seed, _rng.PM_PROPOSAL)
    theta = np.asarray(theta0, dtype=float).reshape(p).copy()
    log_target = float(log_likelihood(theta)) + float(prior.logpdf(theta))
    if not math.isfinite(log_target):
        raise ValueError("theta0 has zero target density")
    chain = np.empty((chain_length, p))
    n_acc = 0
    for t in range(chain_length):
        prop = theta + sd * rng_prop.standard_normal(p)
        log_u = math.log(rng_prop.random())
        lp_prop = float(prior.logpdf(prop))
        if math.isfinite(lp_prop):
            lt_prop = float(log_likelihood(prop)) + lp_prop
            if log_u < lt_prop - log_target:
                theta, log_target = prop, lt_prop
                n_acc += 1
        chain[t] = theta
    meta = {"method": "rw-mh", "acceptance_rate": n_acc / chain_length, "burn_in": int(burn_in)}
    return WeightedDraws.equal(chain, meta=meta).discard(burn_in)
