"""Stereological extremes: Poisson-many inclusions with generalized Pareto sizes.

Inclusions arrive as a Poisson count with rate ``lam``; each latent size is
the threshold ``nu0`` plus a generalized Pareto exceedance with scale
``sigma`` and shape ``xi``. A planar section through a spherical inclusion at
a uniform relative offset ``U`` shows the exceedance shrunk by
``sqrt(1 - U^2)``, so observed sizes are never below ``nu0``.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from .. import rng as _rng
from ..core import Prior, SimulatorModel, Uniform
from ..distances import FULL_DATA_DISTANCES
from ..summaries import MAD_FLOOR, SummaryFn, mad

NU0 = 5.0
TRUE_THETA = (30.0, 1.5, 0.1)
PARAM_NAMES = ("lambda", "sigma", "xi")
VAR_FLOOR = 1e-6


def gpd_quantile(u, sigma, xi):
    """Generalized Pareto quantile ``(sigma/xi)((1-u)^{-xi} - 1)``; ``-sigma log(1-u)`` at ``xi = 0``."""
    u = np.asarray(u, dtype=float)
    if xi == 0:
        return -sigma * np.log1p(-u)
    return (sigma / xi) * np.expm1(-xi * np.log1p(-u))


def simulate_stereological(theta, rng):
    """One dataset of observed sizes, shape ``(N, 1)``; ``N`` may be zero."""
    lam, sigma, xi = (float(v) for v in theta)
    if not (lam > 0 and sigma > 0):
        raise ValueError(f"need lambda > 0 and sigma > 0, got {theta}")
    rng = _rng.make_rng(rng)
    n = rng.poisson(lam)
    v = gpd_quantile(rng.random(n), sigma, xi)
    u = rng.random(n)
    return (v * np.sqrt(1.0 - u * u) + NU0)[:, None]


# ---------------------------------------------------------------------------
# Four-number summary
# ---------------------------------------------------------------------------


def summaries_4(data, return_flag=False):
    """``(count, mean log S, max log S, median S)``; a zero-count dataset gives zeros.

    With ``return_flag=True`` returns ``(vector, degenerate)`` where
    ``degenerate`` marks the zero-count convention.
    """
    s = np.asarray(data, dtype=float).ravel()
    if s.size == 0:
        out = np.zeros(4)
        return (out, True) if return_flag else out
    ls = np.log(s)
    out = np.array([s.size, ls.mean(), ls.max(), np.median(s)])
    return (out, False) if return_flag else out


def _segments(datasets):
    sizes = np.array([len(d) for d in datasets])
    flat = np.concatenate([np.asarray(d, dtype=float).ravel() for d in datasets]) if sizes.sum() else np.empty(0)
    seg = np.repeat(np.arange(len(datasets)), sizes)
    return flat, seg, sizes


def _summaries_4_list(datasets):
    flat, seg, sizes = _segments(datasets)
    B = len(datasets)
    out = np.zeros((B, 4))
    out[:, 0] = sizes
    nz = sizes > 0
    if not nz.any():
        return out
    ls = np.log(flat)
    out[:, 1] = np.bincount(seg, ls, B) / np.maximum(sizes, 1)
    mx = np.full(B, -np.inf)
    np.maximum.at(mx, seg, ls)
    out[nz, 2] = mx[nz]
    order = np.lexsort((flat, seg))
    sorted_vals = flat[order]
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    lo = starts + (sizes - 1) // 2
    hi = starts + sizes // 2
    med = np.zeros(B)
    med[nz] = 0.5 * (sorted_vals[lo[nz]] + sorted_vals[hi[nz]])
    out[:, 3] = med
    return out


def summary_4():
    return SummaryFn(4, summaries_4, name="stereo-4", batch_list=_summaries_4_list)


# ---------------------------------------------------------------------------
# Auxiliary Gaussian-mixture score summary
# ---------------------------------------------------------------------------


class MixtureFit(NamedTuple):
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    n_iter: int
    loglik: float


def fit_mixture(x, n_components=3, max_iter=100_000, tol=1e-13):
    """Maximum-likelihood univariate Gaussian mixture by EM.

    Starts from equal weights, means at evenly spaced sample quantiles and
    the pooled variance; variances are floored at ``1e-6``. Stops when no
    parameter moves by more than ``tol`` (relative) in one iteration.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size < n_components:
        raise ValueError(f"need at least {n_components} points to fit the mixture")
    K = n_components
    w = np.full(K, 1.0 / K)
    mu = np.quantile(x, (np.arange(K) + 0.5) / K)
    var = np.full(K, max(np.var(x), VAR_FLOOR))
    it = 0
    for it in range(1, max_iter + 1):
        logp = stats.norm.logpdf(x[:, None], mu, np.sqrt(var)) + np.log(w)
        top = logp.max(axis=1, keepdims=True)
        r = np.exp(logp - top)
        r /= r.sum(axis=1, keepdims=True)
        nk = r.sum(axis=0)
        w_new = nk / x.size
        mu_new = (r * x[:, None]).sum(axis=0) / nk
        var_new = np.maximum((r * (x[:, None] - mu_new) ** 2).sum(axis=0) / nk, VAR_FLOOR)
        old = np.concatenate([w, mu, var])
        new = np.concatenate([w_new, mu_new, var_new])
        w, mu, var = w_new, mu_new, var_new
        if np.max(np.abs(new - old) / np.maximum(1.0, np.abs(old))) < tol:
            break
    ll = float(np.sum(_mixture_logpdf(x, w, mu, var)))
    return MixtureFit(w, mu, var, it, ll)


def _mixture_logpdf(x, w, mu, var):
    comp = stats.norm.logpdf(np.asarray(x, dtype=float)[:, None], mu, np.sqrt(var)) + np.log(w)
    top = comp.max(axis=1)
    return top + np.log(np.exp(comp - top[:, None]).sum(axis=1))


def mixture_loglik(params, x):
    """Log-likelihood at ``params = (w1, w2, mu1, mu2, mu3, v1, v2, v3)`` with ``w3 = 1 - w1 - w2``."""
    params = np.asarray(params, dtype=float)
    w = np.array([params[0], params[1], 1.0 - params[0] - params[1]])
    return float(np.sum(_mixture_logpdf(x, w, params[2:5], params[5:8])))


def mixture_params(fit):
    return np.concatenate([fit.weights[:2], fit.means, fit.variances])


def _score_terms(x, fit):
    """Per-point gradient of the mixture log-density, ``(n, 8)``."""
    w, mu, var = fit.weights, fit.means, fit.variances
    x = np.asarray(x, dtype=float).ravel()
    comp = stats.norm.logpdf(x[:, None], mu, np.sqrt(var))
    logp = comp + np.log(w)
    top = logp.max(axis=1, keepdims=True)
    r = np.exp(logp - top)
    r /= r.sum(axis=1, keepdims=True)
    dz = x[:, None] - mu
    g_w = r[:, :2] / w[:2] - (r[:, 2] / w[2])[:, None]
    g_mu = r * dz / var
    g_var = r * 0.5 * (dz**2 / var**2 - 1.0 / var)
    return np.column_stack([g_w, g_mu, g_var])


def summaries_9(data, fit):
    """Mixture score at the frozen ``fit`` summed over the log sizes, plus the count."""
    s = np.asarray(data, dtype=float).ravel()
    if s.size == 0:
        return np.zeros(9)
    return np.concatenate([_score_terms(np.log(s), fit).sum(axis=0), [s.size]])


def summary_9(fit):
    def batch_list(datasets):
        flat, seg, sizes = _segments(datasets)
        B = len(datasets)
        out = np.zeros((B, 9))
        out[:, 8] = sizes
        if flat.size:
            terms = _score_terms(np.log(flat), fit)
            for j in range(8):
                out[:, j] = np.bincount(seg, terms[:, j], B)
        return out

    return SummaryFn(9, lambda y: summaries_9(y, fit), name="stereo-9", batch_list=batch_list)


# ---------------------------------------------------------------------------
# Full-data distance: empirical size distribution plus count
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SizeCountDistance:
    """``D(sizes_z, sizes_y) / size_scale + |N_z - N_y| / count_scale``.

    ``D`` is one of the full-data distances. An empty dataset is compared
    as the single point ``{nu0}``.
    """

    distance: str
    size_scale: float = 1.0
    count_scale: float = 1.0

    def parts(self, z, y):
        fn = FULL_DATA_DISTANCES[self.distance]
        zs = np.asarray(z, dtype=float).ravel()
        ys = np.asarray(y, dtype=float).ravel()
        zs = zs if zs.size else np.array([NU0])
        ys = ys if ys.size else np.array([NU0])
        return fn(zs, ys), abs(np.size(z) - np.size(y))

    def __call__(self, z, y):
        d, dn = self.parts(z, y)
        return d / self.size_scale + dn / self.count_scale


def pilot_distance(distance, model, y, n_pilot, seed):
    """Scale both parts of a :class:`SizeCountDistance` by their pilot MAD."""
    rng = _rng.make_rng(seed, _rng.PILOT)
    raw = SizeCountDistance(distance)
    parts = np.array([raw.parts(z, y) for z in model.simulate_many(model.prior.sample(rng, n_pilot), rng)])
    scales = np.maximum(mad(parts, axis=0), MAD_FLOOR)
    return SizeCountDistance(distance, float(scales[0]), float(scales[1]))


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StereologicalBenchmark:
    true_theta: tuple = TRUE_THETA
    data_seed: int = 20240601
    lam_range: tuple = (1.0, 100.0)
    sigma_range: tuple = (0.1, 5.0)
    xi_range: tuple = (-0.5, 1.0)

    def prior(self):
        return Prior([Uniform(*self.lam_range), Uniform(*self.sigma_range), Uniform(*self.xi_range)])

    def model(self):
        return SimulatorModel(self.prior(), simulate_stereological, name="stereological",
                              param_names=PARAM_NAMES)

    def observed(self):
        return simulate_stereological(np.asarray(self.true_theta), _rng.make_rng(self.data_seed))

    def pilot_fit(self):
        return fit_mixture(np.log(self.observed().ravel()))

    def summary(self, kind="9"):
        return summary_9(self.pilot_fit()) if str(kind) == "9" else summary_4()
