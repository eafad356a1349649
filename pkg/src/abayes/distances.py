"""Discrepancies between empirical measures of scalar samples.

All functions take two one-dimensional samples (a trailing axis of size one
is accepted) and return a float.
"""

import numpy as np

QUANTILE_GRID = 1000


def _sample(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise ValueError(f"{name} must be a scalar sample, got shape {x.shape}")
    if x.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def wasserstein_1d(x, z):
    """Order-1 Wasserstein distance between two empirical measures.

    Equal sizes use the sorted matching exactly; unequal sizes integrate the
    absolute difference of the quantile functions on a midpoint grid of
    ``QUANTILE_GRID`` levels.
    """
    x = np.sort(_sample(x, "x"))
    z = np.sort(_sample(z, "z"))
    if x.size == z.size:
        return float(np.mean(np.abs(x - z)))
    u = (np.arange(QUANTILE_GRID) + 0.5) / QUANTILE_GRID
    qx = x[np.minimum(np.ceil(u * x.size).astype(int) - 1, x.size - 1)]
    qz = z[np.minimum(np.ceil(u * z.size).astype(int) - 1, z.size - 1)]
    return float(np.mean(np.abs(qx - qz)))


def cramer_von_mises(x, z):
    """Integral of ``(F_x - F_z)^2`` against the pooled empirical measure."""
    x = np.sort(_sample(x, "x"))
    z = np.sort(_sample(z, "z"))
    pooled = np.concatenate([x, z])
    fx = np.searchsorted(x, pooled, side="right") / x.size
    fz = np.searchsorted(z, pooled, side="right") / z.size
    return float(np.mean((fx - fz) ** 2))


def median_heuristic(x, z):
    """Median pairwise distance of the pooled sample (1.0 if that is zero)."""
    pooled = np.concatenate([_sample(x, "x"), _sample(z, "z")])
    iu = np.triu_indices(pooled.size, k=1)
    med = float(np.median(np.abs(pooled[:, None] - pooled[None, :])[iu])) if pooled.size > 1 else 0.0
    return med if med > 0 else 1.0


def mmd(x, z, bandwidth=None, unbiased=True):
    """Squared maximum mean discrepancy with a Gaussian kernel.

    The default is the unbiased U-statistic, which can be slightly negative.
    ``unbiased=False`` gives the (nonnegative) V-statistic. ``bandwidth``
    defaults to :func:`median_heuristic`.
    """
    # sorting makes the value exactly permutation invariant
    x = np.sort(_sample(x, "x"))
    z = np.sort(_sample(z, "z"))
    if unbiased and (x.size < 2 or z.size < 2):
        raise ValueError("unbiased MMD needs at least 2 points in each sample")
    h = median_heuristic(x, z) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")

    def gram(a, b):
        # scale before squaring so tiny bandwidths do not underflow
        with np.errstate(over="ignore"):
            return np.exp(-0.5 * ((a[:, None] - b[None, :]) / h) ** 2)

    kxx, kzz, kxz = gram(x, x), gram(z, z), gram(x, z)
    n, m = x.size, z.size
    if unbiased:
        sxx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
        szz = (kzz.sum() - np.trace(kzz)) / (m * (m - 1))
    else:
        sxx = kxx.sum() / n**2
        szz = kzz.sum() / m**2
    return float(sxx + szz - 2.0 * kxz.mean())


def _sum_pairwise_abs(sorted_x):
    # sum_{i<j} |x_i - x_j| for sorted input
    n = sorted_x.size
    k = np.arange(1, n + 1)
    return float(np.sum(sorted_x * (2 * k - n - 1)))


def energy_distance(x, z):
    """``2 E|X-Z| - E|X-X'| - E|Z-Z'|`` with V-statistic averages."""
    x = np.sort(_sample(x, "x"))
    z = np.sort(_sample(z, "z"))
    n, m = x.size, z.size
    sxx = _sum_pairwise_abs(x)
    szz = _sum_pairwise_abs(z)
    sxz = _sum_pairwise_abs(np.sort(np.concatenate([x, z]))) - sxx - szz
    if n == m and np.array_equal(x, z):
        return 0.0
    value = 2.0 * sxz / (n * m) - 2.0 * sxx / n**2 - 2.0 * szz / m**2
    # the V-statistic is nonnegative; clip round-off
    return max(float(value), 0.0)


FULL_DATA_DISTANCES = {
    "wasserstein": wasserstein_1d,
    "cvm": cramer_von_mises,
    "mmd": mmd,
    "energy": energy_distance,
}
