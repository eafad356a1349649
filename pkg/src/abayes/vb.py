"""Mean-field variational Bayes: ELBO evaluation, CAVI and SVI."""

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy import special

from . import rng as _rng

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Variational factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalFactor:
    mean: float
    var: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.var)):
            raise ValueError(f"normal factor has non-finite parameters ({self.mean}, {self.var})")
        if not self.var > 0:
            raise ValueError(f"normal factor variance must be > 0, got {self.var}")

    kind = "normal"

    @property
    def params(self):
        return (float(self.mean), float(self.var))

    def sample(self, rng, size):
        return self.mean + math.sqrt(self.var) * rng.standard_normal(size)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * (_LOG_2PI + math.log(self.var)) - 0.5 * (x - self.mean) ** 2 / self.var

    def entropy(self):
        return 0.5 * (_LOG_2PI + 1.0 + math.log(self.var))

    @property
    def second_moment(self):
        return self.mean**2 + self.var


@dataclass(frozen=True)
class GammaFactor:
    """Gamma factor with shape and rate."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0 and math.isfinite(self.shape) and math.isfinite(self.rate)):
            raise ValueError(f"gamma factor needs finite shape, rate > 0, got ({self.shape}, {self.rate})")

    kind = "gamma"

    @property
    def params(self):
        return (float(self.shape), float(self.rate))

    @property
    def mean(self):
        return self.shape / self.rate

    @property
    def var(self):
        return self.shape / self.rate**2

    @property
    def mean_log(self):
        return float(special.digamma(self.shape) - math.log(self.rate))

    def sample(self, rng, size):
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.shape * math.log(self.rate) - special.gammaln(self.shape)
                   + (self.shape - 1) * np.log(x) - self.rate * x)
        return np.where(x > 0, out, -np.inf)

    def entropy(self):
        a = self.shape
        return float(a - math.log(self.rate) + special.gammaln(a) + (1 - a) * special.digamma(a))


Factor = Union[NormalFactor, GammaFactor]
_FACTOR_TYPES = {"normal": NormalFactor, "gamma": GammaFactor}


class MeanFieldFamily:
    """A product of independent one-dimensional factors.

    ``lam`` is the flattened variational parameter vector: ``(mean, var)``
    for a normal factor and ``(shape, rate)`` for a gamma factor, in
    coordinate order.
    """

    def __init__(self, factors: Sequence[Factor]):
        factors = tuple(factors)
        if not factors:
            raise ValueError("a mean-field family needs at least one factor")
        for f in factors:
            if not isinstance(f, (NormalFactor, GammaFactor)):
                raise TypeError(f"unsupported factor type {type(f).__name__}")
        self.factors = factors

    def __len__(self):
        return len(self.factors)

    def __eq__(self, other):
        return isinstance(other, MeanFieldFamily) and self.factors == other.factors

    def __repr__(self):
        return f"MeanFieldFamily({list(self.factors)!r})"

    @property
    def dim(self):
        return len(self.factors)

    @property
    def lam(self):
        return np.array([v for f in self.factors for v in f.params])

    @property
    def kinds(self):
        return tuple(f.kind for f in self.factors)

    @classmethod
    def from_lam(cls, kinds, lam):
        lam = np.asarray(lam, dtype=float).ravel()
        if lam.size != 2 * len(kinds):
            raise ValueError("lam must hold two parameters per factor")
        return cls([_FACTOR_TYPES[k](float(lam[2 * j]), float(lam[2 * j + 1])) for j, k in enumerate(kinds)])

    def replace(self, j, factor):
        factors = list(self.factors)
        factors[j] = factor
        return MeanFieldFamily(factors)

    def mean(self):
        return np.array([f.mean for f in self.factors])

    def var(self):
        return np.array([f.var for f in self.factors])

    def cov(self):
        """Covariance of ``q``; diagonal by construction."""
        return np.diag(self.var())

    def sample(self, rng, size):
        return np.column_stack([f.sample(rng, size) for f in self.factors])

    def logpdf(self, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return sum(f.logpdf(theta[:, j]) for j, f in enumerate(self.factors))

    def entropy(self):
        return float(sum(f.entropy() for f in self.factors))


# ---------------------------------------------------------------------------
# ELBO
# ---------------------------------------------------------------------------


class ElboEstimate(NamedTuple):
    value: float
    stderr: float
    method: str  # "analytic" or "mc"


def elbo(joint_logdensity, q, y, n_mc=1000, seed=0, analytic=None):
    """Evidence lower bound ``E_q[log p(theta, y)] - E_q[log q(theta)]``.

    With ``analytic`` (a callable ``(q, y) -> float``) the closed form is
    returned with zero standard error; otherwise ``n_mc`` draws from ``q``
    give a Monte Carlo estimate and its standard error.
    """
    if analytic is not None:
        return ElboEstimate(float(analytic(q, y)), 0.0, "analytic")
    n_mc = int(n_mc)
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = _rng.make_rng(seed, _rng.ELBO)
    draws = q.sample(rng, n_mc)
    log_q = q.logpdf(draws)
    vals = np.empty(n_mc)
    for i, theta in enumerate(draws):
        v = float(joint_logdensity(theta, y))
        if not math.isfinite(v):
            raise ValueError(f"joint log-density is {v} at q-draw {i}: {theta}")
        vals[i] = v - log_q[i]
    se = float(vals.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.inf
    return ElboEstimate(float(vals.mean()), se, "mc")


def kl_mean_field_gaussian(q, mean, cov):
    """``KL[q || N(mean, cov)]`` for an all-normal mean-field ``q``."""
    if any(f.kind != "normal" for f in q.factors):
        raise ValueError("q must consist of normal factors only")
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    p = q.dim
    if mean.shape != (p,) or cov.shape != (p, p):
        raise ValueError(f"target dimension does not match q (dimension {p})")
    if not np.allclose(cov, cov.T):
        raise ValueError("target covariance is not symmetric")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("target covariance is not positive definite") from None
    mq, vq = q.mean(), q.var()
    Linv = np.linalg.inv(L)
    prec = Linv.T @ Linv
    diff = mean - mq
    logdet_p = 2.0 * np.sum(np.log(np.diag(L)))
    kl = 0.5 * (np.sum(np.diag(prec) * vq) + diff @ prec @ diff - p + logdet_p - np.sum(np.log(vq)))
    return max(float(kl), 0.0)


# ---------------------------------------------------------------------------
# Conditionally conjugate models
# ---------------------------------------------------------------------------


class ConjugateModelSpec:
    """A joint model whose complete conditionals are closed-form.

    Subclasses implement ``initial(y)``, ``update(j, q, y)`` (the optimal
    factor ``j`` given the others) and ``elbo(q, y)``. Models of the
    global/local exchangeable form also implement ``alpha`` (the prior
    natural parameter of the global factor), ``expected_stat(lam, y_i)``
    (expected sufficient statistic of one local block under its optimal
    local factor) and ``global_factor(lam)``; those enable :func:`svi`.
    Natural parameters of a normal global factor are
    ``(precision * mean, precision)``.
    """

    conjugate = True
    name = "conjugate-model"

    def initial(self, y):
        raise NotImplementedError

    def update(self, j, q, y):
        raise NotImplementedError

    def elbo(self, q, y):
        raise NotImplementedError

    def joint_logdensity(self, theta, y):
        raise NotImplementedError

    # global/local structure (optional)
    alpha = None

    def expected_stat(self, lam, y_i):
        raise NotImplementedError

    def global_factor(self, lam):
        raise NotImplementedError


class CaviResult(NamedTuple):
    q: MeanFieldFamily
    elbo_trace: np.ndarray
    n_iter: int
    converged: bool


def cavi(spec, y, max_iter=10_000, rel_tol=1e-8, init=None):
    """Coordinate-ascent variational inference.

    Each sweep updates every factor once in ascending coordinate order; the
    ELBO is recorded before the first sweep and after each sweep. Stops when
    ``|delta ELBO| / |ELBO| < rel_tol`` or after ``max_iter`` sweeps.
    """
    if not isinstance(spec, ConjugateModelSpec) or not getattr(spec, "conjugate", False):
        raise ValueError(f"{getattr(spec, 'name', spec)!r} does not provide closed-form coordinate updates")
    y = np.asarray(y, dtype=float)
    q = spec.initial(y) if init is None else init
    if not isinstance(q, MeanFieldFamily):
        raise TypeError("initial q must be a MeanFieldFamily")
    trace = [float(spec.elbo(q, y))]
    converged = False
    it = 0
    for it in range(1, int(max_iter) + 1):
        for j in range(q.dim):
            new = spec.update(j, q, y)
            if not np.all(np.isfinite(new.params)):
                raise FloatingPointError(f"CAVI update of factor {j} produced NaN at sweep {it}")
            q = q.replace(j, new)
        value = float(spec.elbo(q, y))
        if not math.isfinite(value):
            raise FloatingPointError(f"ELBO is {value} after sweep {it}")
        trace.append(value)
        if abs(trace[-1] - trace[-2]) <= rel_tol * abs(trace[-1]):
            converged = True
            break
    return CaviResult(q, np.array(trace), it, converged)


@dataclass(frozen=True)
class RobbinsMonro:
    """Step size ``rho_t = (t + tau)^(-kappa)`` for ``t = 1, 2, ...``."""

    tau: float = 1.0
    kappa: float = 0.7

    def __post_init__(self):
        if not 0.5 < self.kappa <= 1:
            raise ValueError(f"kappa must lie in (0.5, 1], got {self.kappa}")
        if not self.tau >= 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")

    def __call__(self, t):
        return (t + self.tau) ** (-self.kappa)


class SviResult(NamedTuple):
    lam: np.ndarray
    q_global: object
    trace: np.ndarray       # global natural parameters after each step
    lam_hat: np.ndarray     # intermediate targets of each step
    steps: np.ndarray       # step sizes
    indices: np.ndarray     # data index drawn at each step


def svi(spec, y, schedule=None, epochs=200, seed=0, lam0=None):
    """Stochastic variational inference with single-observation subsampling.

    At step ``t`` one observation ``y_i`` is drawn uniformly, its local
    factor is set optimally given the current global parameters, the
    intermediate target ``alpha + n [E t(x_i, y_i), 1]`` is formed and the
    global natural parameters move to
    ``(1 - rho_t) lam + rho_t lam_hat``. ``schedule`` is a
    :class:`RobbinsMonro` (default ``tau = 1``, ``kappa = 0.7``) or any
    callable ``t -> rho_t`` with values in ``(0, 1]``. One epoch is ``n``
    steps.
    """
    if spec.alpha is None:
        raise ValueError(f"{getattr(spec, 'name', spec)!r} has no global/local structure for SVI")
    y = np.asarray(y, dtype=float)
    if y.ndim > 1:
        y = y.reshape(len(y), -1)[:, 0] if y.shape[-1] == 1 else y
    n = len(y)
    if n == 0:
        raise ValueError("SVI needs at least one observation")
    schedule = RobbinsMonro() if schedule is None else schedule
    alpha = np.asarray(spec.alpha, dtype=float)
    lam = alpha.copy() if lam0 is None else np.asarray(lam0, dtype=float).copy()
    n_steps = int(epochs) * n
    rng = _rng.make_rng(seed, _rng.SVI)
    idx = rng.integers(0, n, size=n_steps)
    trace = np.empty((n_steps, lam.size))
    hats = np.empty((n_steps, lam.size))
    rhos = np.empty(n_steps)
    for t in range(n_steps):
        rho = float(schedule(t + 1))
        if not 0 < rho <= 1:
            raise ValueError(f"step size {rho} at step {t + 1} is outside (0, 1]")
        stat = np.atleast_1d(np.asarray(spec.expected_stat(lam, y[idx[t]]), dtype=float))
        lam_hat = alpha + n * np.concatenate([stat, [1.0]])
        lam = (1.0 - rho) * lam + rho * lam_hat
        trace[t], hats[t], rhos[t] = lam, lam_hat, rho
    return SviResult(lam, spec.global_factor(lam), trace, hats, rhos, idx)


def svi_stability(result, window=0.1):
    """Per-step movement of the running mean of the global parameters.

    Returns ``(drift, bound)``: ``drift`` is the largest sup-norm change of
    the running mean ``(1/t) sum_{s<=t} lam_s`` between consecutive steps in
    the final ``window`` fraction of the run, and ``bound`` is
    ``2 rho_T ||lam_hat_T||_inf``.
    """
    T = len(result.trace)
    start = max(1, int(math.floor((1.0 - window) * T)))
    running = np.cumsum(result.trace, axis=0) / np.arange(1, T + 1)[:, None]
    drift = float(np.max(np.abs(np.diff(running[start - 1:], axis=0))))
    bound = 2.0 * float(result.steps[-1]) * float(np.max(np.abs(result.lam_hat[-1])))
    return drift, bound
