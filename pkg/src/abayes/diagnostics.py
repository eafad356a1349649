"""Posterior summaries, effective sample size and histogram total variation."""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import WeightedDraws

INTERVAL_LEVELS = (0.5, 0.9, 0.95)
QUANTILE_TOL = 1e-12


def weighted_quantile(x, w, q):
    """Inverted-CDF quantile: smallest ``x`` whose cumulative weight reaches ``q``.

    A tolerance of ``1e-12`` on the cumulative weight absorbs rounding, so
    with equal weights the result is the ``ceil(q N)``-th order statistic.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    order = np.argsort(x, kind="stable")
    xs, cw = x[order], np.cumsum(w[order])
    cw /= cw[-1]
    q = np.atleast_1d(np.asarray(q, dtype=float))
    idx = np.searchsorted(cw, q - QUANTILE_TOL, side="left")
    return xs[np.minimum(idx, xs.size - 1)]


@dataclass(frozen=True)
class PosteriorSummary:
    names: tuple
    mean: np.ndarray
    sd: np.ndarray
    intervals: dict             # level -> (p, 2) array of equal-tailed bounds
    ess: np.ndarray = None      # per-parameter, for chains
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "parameters": list(self.names),
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "intervals": {f"{lvl:g}": self.intervals[lvl].tolist() for lvl in self.intervals},
        }
        if self.ess is not None:
            out["ess"] = self.ess.tolist()
        out["meta"] = self.meta
        return out


def summarize(draws, names=None, chain=False, levels=INTERVAL_LEVELS):
    """Weighted means, sds and equal-tailed intervals of every parameter.

    With ``chain=True`` the per-parameter ESS is included as well.
    """
    if len(draws) == 0:
        raise ValueError("cannot summarize zero draws")
    X, w = draws.draws, draws.weights
    mean = w @ X
    const = np.ptp(X, axis=0) == 0
    mean[const] = X[0, const]  # the weighted sum of a constant column can be off by one ulp
    sd = np.sqrt(np.maximum(w @ (X - mean) ** 2, 0.0))
    intervals = {}
    for lvl in levels:
        lo, hi = 0.5 * (1 - lvl), 0.5 * (1 + lvl)
        intervals[lvl] = np.array([weighted_quantile(X[:, j], w, [lo, hi]) for j in range(X.shape[1])])
    names = tuple(names) if names is not None else tuple(f"param_{j + 1}" for j in range(X.shape[1]))
    ess_vals = None
    if chain:
        ess_vals = np.array([ess_1d(X[:, j]).ess for j in range(X.shape[1])])
    meta = {k: v for k, v in draws.meta.items() if isinstance(v, (int, float, str, bool))}
    return PosteriorSummary(names, mean, sd, intervals, ess_vals, meta)


class EssResult(NamedTuple):
    ess: float
    clipped: bool
    degenerate: bool


def _autocorr(x):
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def ess_1d(x):
    """ESS of one chain by Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 10:
        raise ValueError(f"ESS needs a chain of length >= 10, got {n}")
    if np.ptp(x) == 0:
        return EssResult(float(n), False, True)
    rho = _autocorr(x)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    if tau <= 0:
        return EssResult(float(n), True, False)
    ess = n / tau
    if ess > n:
        return EssResult(float(n), True, False)
    return EssResult(float(ess), False, False)


def ess(chain, return_info=False):
    """Minimum over coordinates of the per-coordinate ESS.

    ``chain`` is a :class:`WeightedDraws` chain or an array. A constant
    coordinate has ESS equal to the chain length and sets the degeneracy
    flag; an estimate above the chain length is clipped and flagged.
    """
    X = chain.draws if isinstance(chain, WeightedDraws) else np.asarray(chain, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    results = [ess_1d(X[:, j]) for j in range(X.shape[1])]
    best = min(results, key=lambda r: r.ess)
    info = EssResult(best.ess, any(r.clipped for r in results), any(r.degenerate for r in results))
    return info if return_info else info.ess


def _coordinate(d, j):
    if isinstance(d, WeightedDraws):
        if len(d) == 0:
            raise ValueError("empty draws")
        return d.draws[:, j], d.weights
    x = np.asarray(d, dtype=float)
    x = x[:, j] if x.ndim == 2 else x.ravel()
    if x.size == 0:
        raise ValueError("empty draws")
    return x, np.full(x.size, 1.0 / x.size)


def total_variation_1d(a, b, coordinate=0, bins=50):
    """Half the L1 distance between weighted histograms on a shared range.

    The range is the union of both samples' ranges, cut into ``bins`` equal
    bins. ``coordinate`` is 0-based.
    """
    if bins < 10:
        raise ValueError("bins must be >= 10")
    xa, wa = _coordinate(a, coordinate)
    xb, wb = _coordinate(b, coordinate)
    lo = min(xa.min(), xb.min())
    hi = max(xa.max(), xb.max())
    if hi == lo:
        return 0.0
    edges = np.linspace(lo, hi, bins + 1)
    ha = np.histogram(xa, edges, weights=wa)[0]
    hb = np.histogram(xb, edges, weights=wb)[0]
    tv = 0.5 * float(np.sum(np.abs(ha / ha.sum() - hb / hb.sum())))
    return min(max(tv, 0.0), 1.0)


def density_curve(draws, coordinate=0, n_points=200):
    """Gaussian-kernel density estimate on an even grid (for plotting files)."""
    x, w = _coordinate(draws, coordinate)
    m = w @ x
    sd = math.sqrt(max(w @ (x - m) ** 2, 0.0))
    n_eff = 1.0 / float(np.sum(w**2))
    h = 1.06 * sd * n_eff ** (-0.2) if sd > 0 else 1.0
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, n_points)
    dens = np.zeros(n_points)
    step = max(1, 2_000_000 // n_points)
    for s in range(0, x.size, step):
        z = (grid[None, :] - x[s:s + step, None]) / h
        dens += w[s:s + step] @ np.exp(-0.5 * z * z)
    return grid, dens / (h * math.sqrt(2 * math.pi))
