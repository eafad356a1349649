"""Gaussian observations with known variance and a normal prior on the mean."""

import math
from dataclasses import dataclass

import numpy as np

from .. import rng as _rng
from ..core import Normal, Prior, SimulatorModel
from ..summaries import mean_summary

_LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class ConjugateGaussianBenchmark:
    """``y_i ~ N(mu, sigma2)``, ``mu ~ N(prior_mean, prior_var)``.

    The defaults (n = 50, sigma2 = 1, prior N(0, 10)) are the reference
    configuration used throughout the test-suite.
    """

    n: int = 50
    sigma2: float = 1.0
    prior_mean: float = 0.0
    prior_var: float = 10.0
    true_mu: float = 1.0
    data_seed: int = 20240501

    def observed(self):
        rng = _rng.make_rng(self.data_seed)
        return self.true_mu + math.sqrt(self.sigma2) * rng.standard_normal((self.n, 1))

    def prior(self):
        return Prior([Normal(self.prior_mean, self.prior_var)])

    def model(self):
        sd = math.sqrt(self.sigma2)
        n = self.n

        def simulate(theta, rng):
            return theta[0] + sd * rng.standard_normal((n, 1))

        def simulate_batch(thetas, rng):
            return thetas[:, 0, None, None] + sd * rng.standard_normal((len(thetas), n, 1))

        return SimulatorModel(
            prior=self.prior(),
            simulate_fn=simulate,
            simulate_batch_fn=simulate_batch,
            log_likelihood=self.log_likelihood,
            name="conjugate-gaussian",
            param_names=("mu",),
        )

    def log_likelihood(self, theta, y):
        y = np.asarray(y, dtype=float).ravel()
        mu = float(np.asarray(theta).ravel()[0])
        return float(-0.5 * y.size * (_LOG_2PI + math.log(self.sigma2))
                     - 0.5 * np.sum((y - mu) ** 2) / self.sigma2)

    def summary(self):
        return mean_summary()

    def oracle_posterior(self, y):
        """Posterior mean, posterior variance and log-evidence of ``mu``."""
        return oracle_posterior(self, y)

    def predictive_mean(self, y):
        return self.oracle_posterior(y)[0]

    def predictive_var(self, y):
        """Variance of one predictive observation."""
        return self.oracle_posterior(y)[1] + self.sigma2

    def posterior_sampler(self, y):
        """Exact posterior draws, for use as a reference method."""
        mean, var, _ = self.oracle_posterior(y)

        def sample(n, seed):
            rng = _rng.make_rng(seed, _rng.PRIOR)
            return mean + math.sqrt(var) * rng.standard_normal((n, 1))

        return sample

    def joint_logdensity(self, theta, y):
        return self.log_likelihood(theta, y) + float(self.prior().logpdf(np.atleast_1d(theta)))

    def analytic_elbo(self, q, y):
        """ELBO of a single normal factor ``q = N(m, v)`` over ``mu``."""
        factor = q.factors[0]
        m, v = factor.mean, factor.var
        y = np.asarray(y, dtype=float).ravel()
        n = y.size
        e_loglik = (-0.5 * n * (_LOG_2PI + math.log(self.sigma2))
                    - 0.5 * (np.sum((y - m) ** 2) + n * v) / self.sigma2)
        e_logprior = (-0.5 * (_LOG_2PI + math.log(self.prior_var))
                      - 0.5 * ((m - self.prior_mean) ** 2 + v) / self.prior_var)
        entropy = 0.5 * (_LOG_2PI + 1.0 + math.log(v))
        return float(e_loglik + e_logprior + entropy)


def oracle_posterior(bench, y):
    """Closed-form posterior ``(mean, var, log_evidence)`` for the conjugate benchmark."""
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    s2, m0, v0 = bench.sigma2, bench.prior_mean, bench.prior_var
    if n == 0:
        return m0, v0, 0.0
    ybar = float(np.mean(y))
    post_prec = 1.0 / v0 + n / s2
    post_var = 1.0 / post_prec
    post_mean = post_var * (m0 / v0 + n * ybar / s2)
    ss = float(np.sum((y - ybar) ** 2))
    log_ev = (-0.5 * n * (_LOG_2PI + math.log(s2))
              - 0.5 * math.log1p(n * v0 / s2)
              - 0.5 * (ss / s2 + n * (ybar - m0) ** 2 / (s2 + n * v0)))
    return post_mean, post_var, log_ev

