"""Priors, simulator models, weighted draws and the shared posterior operations."""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from . import rng as _rng

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Prior marginals
# ---------------------------------------------------------------------------


class Marginal:
    """A univariate prior marginal."""

    name = "marginal"

    def logpdf(self, x):
        raise NotImplementedError

    def sample(self, rng, size):
        raise NotImplementedError

    @property
    def mean(self):
        raise NotImplementedError

    @property
    def var(self):
        raise NotImplementedError

    def params(self):
        return {}

    def describe(self):
        return {"family": self.name, **self.params()}


class Uniform(Marginal):
    name = "uniform"

    def __init__(self, low, high):
        low, high = float(low), float(high)
        if not (np.isfinite(low) and np.isfinite(high)) or not high > low:
            raise ValueError(f"uniform prior needs finite low < high, got ({low}, {high})")
        self.low, self.high = low, high
        self._logdens = -math.log(high - low)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.low) & (x <= self.high)
        return np.where(inside, self._logdens, -np.inf)

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size)

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    @property
    def var(self):
        return (self.high - self.low) ** 2 / 12.0

    def params(self):
        return {"low": self.low, "high": self.high}


class Normal(Marginal):
    """Normal prior parameterized by mean and *variance*."""

    name = "normal"

    def __init__(self, mean, var):
        mean, var = float(mean), float(var)
        if not np.isfinite(mean) or not (var > 0 and np.isfinite(var)):
            raise ValueError(f"normal prior needs finite mean and var > 0, got ({mean}, {var})")
        self.loc, self.variance = mean, var

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * (_LOG_2PI + math.log(self.variance) + (x - self.loc) ** 2 / self.variance)

    def sample(self, rng, size):
        return self.loc + math.sqrt(self.variance) * rng.standard_normal(size)

    @property
    def mean(self):
        return self.loc

    @property
    def var(self):
        return self.variance

    def params(self):
        return {"mean": self.loc, "var": self.variance}


class LogNormal(Marginal):
    """Log-normal prior; ``mean`` and ``var`` refer to the underlying normal."""

    name = "lognormal"

    def __init__(self, mean, var):
        mean, var = float(mean), float(var)
        if not np.isfinite(mean) or not (var > 0 and np.isfinite(var)):
            raise ValueError(f"log-normal prior needs var > 0, got ({mean}, {var})")
        self.mu, self.s2 = mean, var

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(x)
            out = -0.5 * (_LOG_2PI + math.log(self.s2) + (lx - self.mu) ** 2 / self.s2) - lx
        return np.where(x > 0, out, -np.inf)

    def sample(self, rng, size):
        return np.exp(self.mu + math.sqrt(self.s2) * rng.standard_normal(size))

    @property
    def mean(self):
        return math.exp(self.mu + 0.5 * self.s2)

    @property
    def var(self):
        return (math.exp(self.s2) - 1.0) * math.exp(2 * self.mu + self.s2)

    def params(self):
        return {"mean": self.mu, "var": self.s2}


class Gamma(Marginal):
    """Gamma prior with shape and rate."""

    name = "gamma"

    def __init__(self, shape, rate):
        shape, rate = float(shape), float(rate)
        if not (shape > 0 and rate > 0 and np.isfinite(shape) and np.isfinite(rate)):
            raise ValueError(f"gamma prior needs shape > 0 and rate > 0, got ({shape}, {rate})")
        self.shape, self.rate = shape, rate
        self._const = shape * math.log(rate) - special.gammaln(shape)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self._const + (self.shape - 1.0) * np.log(x) - self.rate * x
        return np.where(x > 0, out, -np.inf)

    def sample(self, rng, size):
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    @property
    def mean(self):
        return self.shape / self.rate

    @property
    def var(self):
        return self.shape / self.rate**2

    def params(self):
        return {"shape": self.shape, "rate": self.rate}


_FAMILIES = {"uniform": Uniform, "normal": Normal, "lognormal": LogNormal, "gamma": Gamma}


def marginal_from_dict(spec):
    """Build a marginal from ``{"family": ..., **params}``."""
    spec = dict(spec)
    family = spec.pop("family")
    try:
        cls = _FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown prior family {family!r}") from None
    return cls(**spec)


class Prior:
    """Product of independent univariate marginals."""

    def __init__(self, marginals: Sequence[Marginal]):
        marginals = list(marginals)
        if not marginals:
            raise ValueError("a prior needs at least one marginal")
        for m in marginals:
            if not isinstance(m, Marginal):
                raise TypeError(f"expected a Marginal, got {type(m).__name__}")
        self.marginals = tuple(marginals)

    @property
    def dim(self):
        return len(self.marginals)

    def logpdf(self, theta):
        """Log-density of one parameter vector or of rows of an ``(N, p)`` array."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.dim:
            raise ValueError(f"parameter has length {theta.shape[-1]}, prior dimension is {self.dim}")
        total = np.zeros(theta.shape[:-1])
        for j, m in enumerate(self.marginals):
            total = total + m.logpdf(theta[..., j])
        return total if total.ndim else float(total)

    def sample(self, rng, size=None):
        n = 1 if size is None else int(size)
        out = np.column_stack([m.sample(rng, n) for m in self.marginals])
        return out[0] if size is None else out

    @property
    def mean(self):
        return np.array([m.mean for m in self.marginals])

    @property
    def var(self):
        return np.array([m.var for m in self.marginals])

    def describe(self):
        return [m.describe() for m in self.marginals]

    @classmethod
    def from_list(cls, specs):
        return cls([marginal_from_dict(s) for s in specs])


# ---------------------------------------------------------------------------
# Datasets and models
# ---------------------------------------------------------------------------


def as_dataset(y, allow_empty=False):
    """Coerce observations to a finite ``(n, d)`` float array."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2:
        raise ValueError(f"a dataset is an (n, d) matrix, got shape {y.shape}")
    if y.shape[0] == 0 and not allow_empty:
        raise ValueError("a dataset needs at least one observation")
    if not np.all(np.isfinite(y)):
        raise ValueError("dataset contains non-finite entries")
    return y


@dataclass(frozen=True)
class SimulatorModel:
    """A prior plus a forward simulator.

    ``simulate_fn(theta, rng)`` must draw all its randomness from ``rng``.
    ``simulate_batch_fn(thetas, rng)``, when given, simulates one dataset per
    row of ``thetas`` and returns an ``(B, n, d)`` array; it is used by the
    vectorized samplers and must be distributionally identical to looping.
    """

    prior: Prior
    simulate_fn: Callable
    name: str = "model"
    log_likelihood: Optional[Callable] = None
    simulate_batch_fn: Optional[Callable] = None
    param_names: Optional[tuple] = None

    @property
    def dim(self):
        return self.prior.dim

    @property
    def names(self):
        if self.param_names is not None:
            return tuple(self.param_names)
        return tuple(f"param_{j + 1}" for j in range(self.dim))

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"parameter must have shape ({self.dim},), got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameter has non-finite entries")
        return theta

    def simulate(self, theta, seed):
        """One dataset at ``theta``; a pure function of ``(theta, seed)``."""
        theta = self.check_theta(theta)
        return as_dataset(self.simulate_fn(theta, _rng.make_rng(seed)), allow_empty=True)

    def simulate_many(self, thetas, rng):
        """Simulate one dataset per row; array when shapes agree, else a list."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if self.simulate_batch_fn is not None:
            return np.asarray(self.simulate_batch_fn(thetas, rng), dtype=float)
        return [as_dataset(self.simulate_fn(t, rng), allow_empty=True) for t in thetas]

    def loglik(self, theta, y):
        if self.log_likelihood is None:
            raise ValueError(f"model {self.name!r} has no evaluable likelihood")
        return float(self.log_likelihood(np.asarray(theta, dtype=float), y))


# ---------------------------------------------------------------------------
# Weighted draws
# ---------------------------------------------------------------------------


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WeightedDraws:
    """Parameter draws with normalized weights.

    ``draws`` is ``(N, p)``; ``distances`` and ``summaries`` (the simulated
    summaries behind each draw) are optional per-draw companions. ``meta``
    holds method name, tolerance, acceptance rate and similar run facts.
    """

    draws: np.ndarray
    weights: np.ndarray
    distances: Optional[np.ndarray] = None
    summaries: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float)
        if draws.ndim == 1:
            draws = draws[:, None]
        if draws.ndim != 2:
            raise ValueError(f"draws must be (N, p), got shape {draws.shape}")
        weights = np.asarray(self.weights, dtype=float).ravel()
        if weights.shape[0] != draws.shape[0]:
            raise ValueError(f"{draws.shape[0]} draws but {weights.shape[0]} weights")
        if draws.shape[0] and not np.all(np.isfinite(draws)):
            raise ValueError("draws contain non-finite values")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        if draws.shape[0] and abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        object.__setattr__(self, "draws", _readonly(draws))
        object.__setattr__(self, "weights", _readonly(weights))
        if self.distances is not None:
            d = np.asarray(self.distances, dtype=float).ravel()
            if d.shape[0] != draws.shape[0]:
                raise ValueError("distances must have one entry per draw")
            object.__setattr__(self, "distances", _readonly(d))
        if self.summaries is not None:
            s = np.asarray(self.summaries, dtype=float)
            if s.ndim == 1:
                s = s[:, None]
            if s.shape[0] != draws.shape[0]:
                raise ValueError("summaries must have one row per draw")
            object.__setattr__(self, "summaries", _readonly(s))

    @classmethod
    def equal(cls, draws, **kwargs):
        draws = np.asarray(draws, dtype=float)
        n = draws.shape[0]
        return cls(draws, np.full(n, 1.0 / n) if n else np.empty(0), **kwargs)

    @classmethod
    def from_unnormalized(cls, draws, weights, **kwargs):
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not total > 0:
            raise ValueError("unnormalized weights have zero total mass")
        return cls(draws, w / total, **kwargs)

    def __len__(self):
        return self.draws.shape[0]

    @property
    def dim(self):
        return self.draws.shape[1]

    def mean(self):
        return self.weights @ self.draws

    def var(self):
        centred = self.draws - self.mean()
        return self.weights @ centred**2

    def sd(self):
        return np.sqrt(self.var())

    def ess_weights(self):
        """Importance-sampling effective size ``1 / sum(w^2)``."""
        return 1.0 / float(np.sum(self.weights**2))

    def with_meta(self, **extra):
        meta = dict(self.meta)
        meta.update(extra)
        return WeightedDraws(self.draws, self.weights, self.distances, self.summaries, meta)

    def discard(self, n):
        """Drop the first ``n`` draws (chain burn-in) and renormalize."""
        if n <= 0:
            return self
        keep = slice(int(n), None)
        d = None if self.distances is None else self.distances[keep]
        s = None if self.summaries is None else self.summaries[keep]
        return WeightedDraws.from_unnormalized(self.draws[keep], self.weights[keep],
                                               distances=d, summaries=s, meta=dict(self.meta))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def sample_prior(prior, seed, size=None):
    """Draw from the prior; one vector, or an ``(size, p)`` array."""
    return prior.sample(_rng.make_rng(seed, _rng.PRIOR), size)


def log_prior_density(prior, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.shape[0] != prior.dim:
        raise ValueError(f"parameter has shape {theta.shape}, prior dimension is {prior.dim}")
    return float(prior.logpdf(theta))


def posterior_expectation(draws, g):
    """Weighted average of ``g`` over the draws."""
    if len(draws) == 0:
        raise ValueError("cannot take an expectation over zero draws")
    values = np.empty(len(draws))
    for i, theta in enumerate(draws.draws):
        v = float(g(theta))
        if not math.isfinite(v):
            raise ValueError(f"g returned non-finite value {v!r} at draw index {i}")
        values[i] = v
    return float(draws.weights @ values)


def predictive_sample(model, draws, n_pred, seed):
    """Composite predictive draws: pick theta by weight, simulate one dataset.

    Returns an ``(n_pred, n, d)`` array (a list when dataset sizes vary).
    """
    if len(draws) == 0:
        raise ValueError("cannot sample the predictive from zero draws")
    n_pred = int(n_pred)
    if n_pred == 0:
        return np.empty((0, 0, 0))
    rng = _rng.make_rng(seed, _rng.PREDICTIVE)
    idx = rng.choice(len(draws), size=n_pred, p=draws.weights)
    return model.simulate_many(draws.draws[idx], rng)
