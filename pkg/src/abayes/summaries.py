"""Summary statistics and standardized summary distances."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import rng as _rng

MAD_FLOOR = 1e-8


@dataclass(frozen=True)
class SummaryFn:
    """A map from a dataset to a fixed-length real vector.

    ``batch``, when given, maps an ``(B, n, d)`` stack of equally shaped
    datasets to a ``(B, dim)`` array in one call; ``batch_list`` does the
    same for a list of datasets whose sizes differ.
    """

    dim: int
    func: Callable
    batch: Optional[Callable] = None
    name: str = "summary"
    batch_list: Optional[Callable] = None

    def __call__(self, y):
        return compute_summary(self, y)


@dataclass(frozen=True)
class SummaryScale:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0 or not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("summary scales must be finite and strictly positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def unit(cls, dim):
        return cls(np.ones(dim))

    def __len__(self):
        return self.values.size


def compute_summary(f, y):
    s = np.asarray(f.func(y), dtype=float).ravel()
    if s.shape != (f.dim,):
        raise ValueError(f"summary {f.name!r} returned length {s.size}, declared {f.dim}")
    if not np.all(np.isfinite(s)):
        raise ValueError(f"summary {f.name!r} produced non-finite output {s}")
    return s


def compute_many(f, datasets):
    """Summaries for a batch of datasets as a ``(B, dim)`` array."""
    fast = None
    if f.batch is not None and isinstance(datasets, np.ndarray) and datasets.ndim == 3:
        fast = f.batch
    elif f.batch_list is not None and isinstance(datasets, list) and datasets:
        fast = f.batch_list
    if fast is not None:
        out = np.asarray(fast(datasets), dtype=float).reshape(len(datasets), f.dim)
        bad = ~np.all(np.isfinite(out), axis=1)
        if bad.any():
            raise ValueError(f"summary {f.name!r} produced non-finite output at batch index {int(np.argmax(bad))}")
        return out
    if len(datasets) == 0:
        return np.empty((0, f.dim))
    return np.vstack([compute_summary(f, z) for z in datasets])


def summary_distance(a, b, scale):
    """Scale-standardized Euclidean distance between two summary vectors."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    s = scale.values if isinstance(scale, SummaryScale) else np.asarray(scale, dtype=float)
    if a.shape != b.shape or a.shape != s.shape:
        raise ValueError(f"length mismatch: {a.size}, {b.size}, scale {s.size}")
    return float(np.sqrt(np.sum(((a - b) / s) ** 2)))


def scaled_distances(S, s_obs, scale):
    """Row-wise :func:`summary_distance` of ``S`` (``(B, k)``) to ``s_obs``."""
    S = np.asarray(S, dtype=float)
    s = scale.values if isinstance(scale, SummaryScale) else np.asarray(scale, dtype=float)
    if S.shape[1] != s.size or np.size(s_obs) != s.size:
        raise ValueError("summary length mismatch")
    return np.sqrt(np.sum(((S - np.asarray(s_obs, dtype=float)) / s) ** 2, axis=1))


def mad(x, axis=0):
    """Median absolute deviation (unscaled)."""
    x = np.asarray(x, dtype=float)
    med = np.median(x, axis=axis, keepdims=True)
    return np.median(np.abs(x - med), axis=axis)


def pilot_scale(model, summary, n_pilot, seed):
    """Per-component MAD of summaries over prior-predictive simulations."""
    if n_pilot < 20:
        raise ValueError(f"n_pilot must be at least 20, got {n_pilot}")
    rng = _rng.make_rng(seed, _rng.PILOT)
    thetas = model.prior.sample(rng, n_pilot)
    S = compute_many(summary, model.simulate_many(thetas, rng))
    return SummaryScale(np.maximum(mad(S, axis=0), MAD_FLOOR))


# ---------------------------------------------------------------------------
# Stock summaries for scalar observations
# ---------------------------------------------------------------------------


def mean_summary():
    return SummaryFn(
        1,
        lambda y: [np.mean(y)],
        batch=lambda Y: Y.reshape(len(Y), -1).mean(axis=1)[:, None],
        name="mean",
    )


def mean_sd_summary():
    """Sample mean and (population, ``ddof=0``) standard deviation."""

    def batch(Y):
        flat = Y.reshape(len(Y), -1)
        return np.column_stack([flat.mean(axis=1), flat.std(axis=1)])

    return SummaryFn(2, lambda y: [np.mean(y), np.std(y)], batch=batch, name="mean_sd")


def quantile_summary(levels=(0.1, 0.5, 0.9)):
    """Empirical quantiles by inverted CDF: the ``ceil(q n)``-th order statistic."""
    levels = tuple(float(q) for q in levels)
    if not all(0 < q <= 1 for q in levels):
        raise ValueError("quantile levels must lie in (0, 1]")

    def func(y):
        return np.quantile(np.ravel(y), levels, method="inverted_cdf")

    def batch(Y):
        return np.quantile(Y.reshape(len(Y), -1), levels, axis=1, method="inverted_cdf").T

    return SummaryFn(len(levels), func, batch=batch, name="quantiles")
