"""Gaussian random-effects model: a global mean and one latent effect per observation."""

import math

import numpy as np

from .. import rng as _rng
from ..vb import ConjugateModelSpec, MeanFieldFamily, NormalFactor

_LOG_2PI = math.log(2.0 * math.pi)


class RandomEffectsSpec(ConjugateModelSpec):
    """``y_i | x_i ~ N(x_i, 1)``, ``x_i | phi ~ N(phi, 1)``, ``phi ~ N(0, prior_var)``.

    Mean-field coordinates are ``(phi, x_1, ..., x_n)``. The global factor's
    natural parameters are ``(precision * mean, precision)`` with prior value
    ``alpha = (0, 1 / prior_var)``; each observation contributes sufficient
    statistic ``x_i`` and one unit of precision.
    """

    name = "random-effects"

    def __init__(self, prior_var=10.0):
        if not prior_var > 0:
            raise ValueError("prior_var must be > 0")
        self.prior_var = float(prior_var)
        self.alpha = np.array([0.0, 1.0 / self.prior_var])

    def initial(self, y):
        y = np.ravel(y)
        return MeanFieldFamily([NormalFactor(0.0, self.prior_var)] + [NormalFactor(v, 0.5) for v in y])

    def update(self, j, q, y):
        y = np.ravel(y)
        if j == 0:
            ex = sum(f.mean for f in q.factors[1:])
            prec = len(y) + 1.0 / self.prior_var
            return NormalFactor(ex / prec, 1.0 / prec)
        return NormalFactor(0.5 * (y[j - 1] + q.factors[0].mean), 0.5)

    def elbo(self, q, y):
        y = np.ravel(y)
        n = y.size
        mphi, vphi = q.factors[0].mean, q.factors[0].var
        mx = np.array([f.mean for f in q.factors[1:]])
        vx = np.array([f.var for f in q.factors[1:]])
        e_lik = -0.5 * n * _LOG_2PI - 0.5 * np.sum((y - mx) ** 2 + vx)
        e_x = -0.5 * n * _LOG_2PI - 0.5 * np.sum((mx - mphi) ** 2 + vx + vphi)
        e_phi = -0.5 * (_LOG_2PI + math.log(self.prior_var)) - 0.5 * (mphi**2 + vphi) / self.prior_var
        return float(e_lik + e_x + e_phi + q.entropy())

    def joint_logdensity(self, theta, y):
        y = np.ravel(y)
        phi, x = float(theta[0]), np.asarray(theta[1:], dtype=float)
        return float(-0.5 * np.sum((y - x) ** 2) - 0.5 * np.sum((x - phi) ** 2)
                     - y.size * _LOG_2PI
                     - 0.5 * (_LOG_2PI + math.log(self.prior_var)) - 0.5 * phi**2 / self.prior_var)

    # global/local structure
    def expected_stat(self, lam, y_i):
        # optimal local factor N((y_i + E phi) / 2, 1/2); statistic E[x_i]
        return [0.5 * (float(y_i) + lam[0] / lam[1])]

    def global_factor(self, lam):
        return NormalFactor(lam[0] / lam[1], 1.0 / lam[1])

    def log_evidence(self, y):
        """Exact ``log p(y)``: ``y ~ N(0, 2 I + prior_var 1 1')``."""
        y = np.ravel(y)
        n = y.size
        # covariance 2I + c 11' has eigenvalues 2 (n-1 times) and 2 + n c
        c = self.prior_var
        s = y.sum()
        quad = (y @ y - c * s**2 / (2.0 + n * c)) / 2.0
        logdet = (n - 1) * math.log(2.0) + math.log(2.0 + n * c)
        return float(-0.5 * (n * _LOG_2PI + logdet + quad))


def random_effects_data(n=200, phi=1.5, seed=11):
    """Synthetic observations for the random-effects benchmark."""
    rng = _rng.make_rng(seed)
    x = phi + rng.standard_normal(n)
    return x + rng.standard_normal(n)
