"""Gaussian data with unknown mean and precision under a normal-gamma prior."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .. import rng as _rng
from ..vb import ConjugateModelSpec, GammaFactor, MeanFieldFamily, NormalFactor

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NormalGammaPosterior:
    mean: float       # location of mu
    kappa: float      # precision multiplier of mu given tau
    shape: float
    rate: float
    log_evidence: float

    @property
    def mu_var(self):
        """Marginal posterior variance of ``mu`` (a Student-t)."""
        return self.rate / (self.kappa * (self.shape - 1.0))

    @property
    def tau_mean(self):
        return self.shape / self.rate


class NormalGammaSpec(ConjugateModelSpec):
    """``y_i ~ N(mu, 1/tau)``, ``mu | tau ~ N(mu0, 1/(kappa0 tau))``, ``tau ~ Gamma(a0, b0)``.

    Mean-field coordinates are ``(mu, tau)`` with a normal and a gamma factor.
    """

    name = "normal-gamma"

    def __init__(self, mu0=0.0, kappa0=1.0, a0=1.0, b0=1.0):
        if not (kappa0 > 0 and a0 > 0 and b0 > 0):
            raise ValueError("kappa0, a0 and b0 must be > 0")
        self.mu0, self.kappa0, self.a0, self.b0 = float(mu0), float(kappa0), float(a0), float(b0)

    def initial(self, y):
        return MeanFieldFamily([NormalFactor(self.mu0, 1.0), GammaFactor(self.a0, self.b0)])

    def update(self, j, q, y):
        y = np.ravel(y)
        n = y.size
        q_mu, q_tau = q.factors
        if j == 0:
            m = (self.kappa0 * self.mu0 + y.sum()) / (self.kappa0 + n)
            return NormalFactor(m, 1.0 / ((self.kappa0 + n) * q_tau.mean))
        if j == 1:
            m, v = q_mu.mean, q_mu.var
            rate = self.b0 + 0.5 * (np.sum((y - m) ** 2) + n * v
                                    + self.kappa0 * ((m - self.mu0) ** 2 + v))
            return GammaFactor(self.a0 + 0.5 * (n + 1), float(rate))
        raise IndexError(j)

    def elbo(self, q, y):
        y = np.ravel(y)
        n = y.size
        q_mu, q_tau = q.factors
        m, v = q_mu.mean, q_mu.var
        e_tau, e_log_tau = q_tau.mean, q_tau.mean_log
        e_lik = 0.5 * n * (e_log_tau - _LOG_2PI) - 0.5 * e_tau * (np.sum((y - m) ** 2) + n * v)
        e_mu = (0.5 * (math.log(self.kappa0) + e_log_tau - _LOG_2PI)
                - 0.5 * self.kappa0 * e_tau * ((m - self.mu0) ** 2 + v))
        e_tau_prior = (self.a0 * math.log(self.b0) - special.gammaln(self.a0)
                       + (self.a0 - 1) * e_log_tau - self.b0 * e_tau)
        return float(e_lik + e_mu + e_tau_prior + q.entropy())

    def joint_logdensity(self, theta, y):
        mu, tau = float(theta[0]), float(theta[1])
        if tau <= 0:
            return -math.inf
        y = np.ravel(y)
        n = y.size
        lik = 0.5 * n * (math.log(tau) - _LOG_2PI) - 0.5 * tau * np.sum((y - mu) ** 2)
        prior_mu = 0.5 * (math.log(self.kappa0 * tau) - _LOG_2PI) - 0.5 * self.kappa0 * tau * (mu - self.mu0) ** 2
        prior_tau = (self.a0 * math.log(self.b0) - special.gammaln(self.a0)
                     + (self.a0 - 1) * math.log(tau) - self.b0 * tau)
        return float(lik + prior_mu + prior_tau)

    def exact_posterior(self, y):
        y = np.ravel(y)
        n = y.size
        ybar = float(y.mean()) if n else 0.0
        kappa = self.kappa0 + n
        mean = (self.kappa0 * self.mu0 + n * ybar) / kappa
        shape = self.a0 + 0.5 * n
        rate = (self.b0 + 0.5 * float(np.sum((y - ybar) ** 2))
                + 0.5 * self.kappa0 * n * (ybar - self.mu0) ** 2 / kappa)
        log_ev = (special.gammaln(shape) - special.gammaln(self.a0) + self.a0 * math.log(self.b0)
                  - shape * math.log(rate) + 0.5 * math.log(self.kappa0 / kappa) - 0.5 * n * _LOG_2PI)
        return NormalGammaPosterior(mean, kappa, shape, rate, float(log_ev))


def normal_gamma_data(n=100, mu=2.0, tau=0.5, seed=7):
    """Synthetic observations for the normal-gamma benchmark."""
    rng = _rng.make_rng(seed)
    return mu + rng.standard_normal(n) / math.sqrt(tau)
