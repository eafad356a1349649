"""Latent Gaussian toy models with reference answers for the nested Laplace scheme."""

import math

import numpy as np
from scipy import integrate, special, stats
from scipy.special import logsumexp

from .. import rng as _rng
from ..laplace import GaussianObs, LatentGaussianModel, PoissonObs

_LOG_2PI = math.log(2.0 * math.pi)


def _log_gamma_pdf(x, shape, rate):
    if x <= 0:
        return -math.inf
    return shape * math.log(rate) - special.gammaln(shape) + (shape - 1) * math.log(x) - rate * x


def ar1_structure(K, rho=0.5):
    """Precision of a unit-innovation stationary AR(1) process of length ``K``."""
    R = np.zeros((K, K))
    idx = np.arange(K)
    R[idx, idx] = 1.0 + rho**2
    R[0, 0] = R[-1, -1] = 1.0
    R[idx[:-1], idx[1:]] = R[idx[1:], idx[:-1]] = -rho
    return R


class GaussianLgm:
    """``y_i | x ~ N(x_i, 1/tau_y)``, ``x | tau ~ N(0, (tau R)^{-1})``, ``tau ~ Gamma(a0, b0)``.

    ``R`` is an AR(1) structure matrix. With ``learn_noise=True`` the noise
    precision is a second hyperparameter with a ``Gamma(a0, b0)`` prior.
    Everything is available in closed form given the hyperparameters.
    """

    def __init__(self, K=10, a0=20.0, b0=10.0, noise_precision=2.0, rho=0.5,
                 learn_noise=False, true_tau=1.5, seed=3):
        self.K, self.a0, self.b0 = K, a0, b0
        self.noise_precision = noise_precision
        self.learn_noise = learn_noise
        self.R = ar1_structure(K, rho)
        rng = _rng.make_rng(seed)
        x = np.linalg.cholesky(np.linalg.inv(true_tau * self.R)) @ rng.standard_normal(K)
        self.y = x + rng.standard_normal(K) / math.sqrt(noise_precision)
        self.log_prior_scale = 0.0

    @property
    def hyper_dim(self):
        return 2 if self.learn_noise else 1

    def _tau_y(self, phi):
        return phi[1] if self.learn_noise else self.noise_precision

    def log_hyperprior(self, phi):
        v = sum(_log_gamma_pdf(p, self.a0, self.b0) for p in np.atleast_1d(phi))
        return v + self.log_prior_scale

    def lgm(self):
        obs = GaussianObs(hyper_index=1) if self.learn_noise else GaussianObs(self.noise_precision)
        init = [self.a0 / self.b0] * self.hyper_dim
        return LatentGaussianModel(self.hyper_dim, self.K, self.log_hyperprior,
                                   lambda phi: phi[0] * self.R, obs, hyper_init=np.array(init))

    def log_marginal_lik(self, phi):
        """Exact ``log p(y | phi)``; ``y ~ N(0, (tau R)^{-1} + I / tau_y)``."""
        phi = np.atleast_1d(phi)
        if np.any(phi <= 0):
            return -math.inf
        cov = np.linalg.inv(phi[0] * self.R) + np.eye(self.K) / self._tau_y(phi)
        return float(stats.multivariate_normal.logpdf(self.y, np.zeros(self.K), cov))

    def log_joint_hyper(self, phi):
        """Exact ``log p(y, phi)``."""
        lp = self.log_hyperprior(phi)
        return lp + self.log_marginal_lik(phi) if math.isfinite(lp) else -math.inf

    def conditional(self, phi):
        """Exact mean and covariance of ``x | phi, y``."""
        phi = np.atleast_1d(phi)
        tau_y = self._tau_y(phi)
        H = phi[0] * self.R + tau_y * np.eye(self.K)
        cov = np.linalg.inv(H)
        return cov @ (tau_y * self.y), cov

    def _hyper_bounds(self):
        # covers the posterior of tau (or each precision) with negligible loss
        return 1e-8, 60.0

    def log_evidence(self):
        """``log p(y)`` by adaptive quadrature over the hyperparameters (1-d only)."""
        if self.learn_noise:
            raise NotImplementedError("closed-form evidence is provided for one hyperparameter")
        c = self.log_joint_hyper(np.array([self.a0 / self.b0]))
        val, _ = integrate.quad(lambda t: math.exp(self.log_joint_hyper(np.array([t])) - c),
                                *self._hyper_bounds(), epsabs=0, epsrel=1e-13, limit=500)
        return c + math.log(val)

    def hyper_posterior_mean(self):
        c = self.log_joint_hyper(np.array([self.a0 / self.b0]))
        f = lambda t: math.exp(self.log_joint_hyper(np.array([t])) - c)  # noqa: E731
        lo, hi = self._hyper_bounds()
        z = integrate.quad(f, lo, hi, epsabs=0, epsrel=1e-13, limit=500)[0]
        return integrate.quad(lambda t: t * f(t), lo, hi, epsabs=0, epsrel=1e-13, limit=500)[0] / z

    def latent_density(self, k, x):
        """Exact marginal density of ``x_k`` (1-based) by quadrature over ``tau``."""
        c = self.log_joint_hyper(np.array([self.a0 / self.b0]))
        lo, hi = self._hyper_bounds()
        f = lambda t: math.exp(self.log_joint_hyper(np.array([t])) - c)  # noqa: E731
        z = integrate.quad(f, lo, hi, epsabs=0, epsrel=1e-13, limit=500)[0]
        out = np.empty(len(x))
        for i, xi in enumerate(x):
            def g(t):
                m, S = self.conditional(np.array([t]))
                return f(t) * stats.norm.pdf(xi, m[k - 1], math.sqrt(S[k - 1, k - 1]))
            out[i] = integrate.quad(g, lo, hi, epsabs=0, epsrel=1e-12, limit=500)[0] / z
        return out


class PoissonLgm:
    """``y_i ~ Poisson(exp(x_i))``, ``x | phi ~ N(0, I / phi)``, ``phi ~ Gamma(a0, b0)``."""

    def __init__(self, K=20, a0=100.0, b0=10.0, true_phi=10.0, seed=5):
        self.K, self.a0, self.b0 = K, a0, b0
        rng = _rng.make_rng(seed)
        x = rng.standard_normal(K) / math.sqrt(true_phi)
        self.x_true = x
        self.y = rng.poisson(np.exp(x)).astype(float)

    def log_hyperprior(self, phi):
        return _log_gamma_pdf(float(np.atleast_1d(phi)[0]), self.a0, self.b0)

    def lgm(self):
        K = self.K
        return LatentGaussianModel(1, K, self.log_hyperprior, lambda phi: phi[0] * np.eye(K),
                                   PoissonObs(), hyper_init=np.array([self.a0 / self.b0]))

    # joint density on (x, phi), vectorized over rows
    def log_joint(self, x, phi):
        x = np.atleast_2d(x)
        phi = np.atleast_1d(phi)
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = (self.a0 * math.log(self.b0) - special.gammaln(self.a0)
                  + (self.a0 - 1) * np.log(phi) - self.b0 * phi)
            lx = 0.5 * self.K * (np.log(phi) - _LOG_2PI) - 0.5 * phi * np.sum(x**2, axis=1)
        ly = np.sum(self.y * x - np.exp(x) - special.gammaln(self.y + 1), axis=1)
        out = lp + lx + ly
        return np.where(phi > 0, out, -np.inf)

    def joint_mode(self):
        """Mode and negative Hessian of ``log p(x, phi, y)`` by Newton's method."""
        K, y = self.K, self.y
        x = np.zeros(K)
        phi = self.a0 / self.b0
        for _ in range(200):
            g_x = y - np.exp(x) - phi * x
            g_p = (0.5 * K + self.a0 - 1) / phi - self.b0 - 0.5 * x @ x
            H = np.zeros((K + 1, K + 1))
            H[:K, :K] = np.diag(np.exp(x) + phi)
            H[:K, K] = H[K, :K] = x
            H[K, K] = (0.5 * K + self.a0 - 1) / phi**2
            step = np.linalg.solve(H, np.concatenate([g_x, [g_p]]))
            x, phi = x + step[:K], phi + step[K]
            if np.max(np.abs(step)) < 1e-12:
                break
        return np.concatenate([x, [phi]]), H

    def mcmc_oracle(self, n_steps=1_000_000, n_chains=50, seed=0, burn_frac=0.1):
        """Random-walk Metropolis on ``(x, phi)`` with a Laplace-preconditioned proposal.

        ``n_chains`` independent chains started from the Laplace approximation
        share the ``n_steps`` budget. Returns post-burn-in draws ``(N, K + 1)``.
        """
        mode, H = self.joint_mode()
        d = self.K + 1
        cov = np.linalg.inv(H)
        L = np.linalg.cholesky(cov)
        scale = 2.38 / math.sqrt(d)
        rng = _rng.make_rng(seed)
        steps = n_steps // n_chains
        state = mode + (rng.standard_normal((n_chains, d)) @ L.T)
        state[:, -1] = np.abs(state[:, -1])
        lt = self.log_joint(state[:, :-1], state[:, -1])
        burn = int(burn_frac * steps)
        out = np.empty((steps - burn, n_chains, d))
        n_acc = 0
        for t in range(steps):
            prop = state + scale * (rng.standard_normal((n_chains, d)) @ L.T)
            lt_prop = self.log_joint(prop[:, :-1], prop[:, -1])
            acc = np.log(rng.random(n_chains)) < lt_prop - lt
            state[acc], lt[acc] = prop[acc], lt_prop[acc]
            n_acc += int(acc.sum())
            if t >= burn:
                out[t - burn] = state
        self.oracle_acceptance = n_acc / (steps * n_chains)
        return out

    def is_evidence(self, n_samples=10_000_000, seed=0, inflation=1.5, chunk=1_000_000):
        """Importance-sampling ``log p(y)`` with an inflated Gaussian proposal on ``(x, phi)``.

        Returns ``(log_evidence, standard_error_of_log)``.
        """
        mode, H = self.joint_mode()
        d = self.K + 1
        cov = inflation**2 * np.linalg.inv(H)
        L = np.linalg.cholesky(cov)
        log_det = 2.0 * np.sum(np.log(np.diag(L)))
        logw = []
        for c in range(-(-n_samples // chunk)):
            size = min(chunk, n_samples - c * chunk)
            rng = _rng.make_rng(seed, c)
            z = rng.standard_normal((size, d))
            th = mode + z @ L.T
            log_q = -0.5 * (d * _LOG_2PI + log_det) - 0.5 * np.sum(z**2, axis=1)
            logw.append(self.log_joint(th[:, :-1], th[:, -1]) - log_q)
        logw = np.concatenate(logw)
        top = logw.max()
        w = np.exp(logw - top)
        mean = w.mean()
        se = w.std(ddof=1) / math.sqrt(w.size) / mean
        return float(top + math.log(mean)), float(se)

    def quadrature_posterior(self, n_x=801, n_phi=801):
        """Deterministic reference: ``p(y | phi)`` factorizes over coordinates.

        Returns ``(log_evidence, phi_mean, phi_sd, x1_mean, x1_sd)`` from nested
        one-dimensional quadrature.
        """
        mode, H = self.joint_mode()
        sd_phi = math.sqrt(np.linalg.inv(H)[-1, -1])
        phis = np.linspace(max(1e-6, mode[-1] - 12 * sd_phi), mode[-1] + 12 * sd_phi, n_phi)
        xs = np.linspace(-8, 8, n_x)
        lw_x = np.log(np.full(n_x, xs[1] - xs[0]))
        ly = self.y[:, None] * xs[None, :] - np.exp(xs)[None, :] - special.gammaln(self.y + 1)[:, None]
        logp = np.empty(n_phi)
        x1_m = np.empty(n_phi)
        x1_s = np.empty(n_phi)
        for i, phi in enumerate(phis):
            lprior = 0.5 * (math.log(phi) - _LOG_2PI) - 0.5 * phi * xs**2
            lint = ly + lprior + lw_x
            per = logsumexp(lint, axis=1)
            logp[i] = per.sum() + self.log_hyperprior(phi)
            p1 = np.exp(lint[0] - per[0])
            x1_m[i] = p1 @ xs
            x1_s[i] = p1 @ xs**2
        dphi = phis[1] - phis[0]
        top = logp.max()
        w = np.exp(logp - top)
        z = w.sum() * dphi
        w /= w.sum()
        phi_mean = w @ phis
        phi_sd = math.sqrt(w @ (phis - phi_mean) ** 2)
        x1_mean = w @ x1_m
        x1_sd = math.sqrt(w @ x1_s - x1_mean**2)
        return top + math.log(z), phi_mean, phi_sd, x1_mean, x1_sd
