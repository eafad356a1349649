"""Brute-force reference implementations used by the distance tests."""

import itertools
import math

import numpy as np


def w1_assignment(x, z):
    """Optimal matching cost over every permutation (equal sizes)."""
    n = len(x)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, sum(abs(x[i] - z[perm[i]]) for i in range(n)) / n)
    return best


def w1_cdf_integral(x, z):
    """Exact integral of |F_x - F_z| over the real line."""
    pts = sorted(set(x) | set(z))
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        fx = sum(v <= a for v in x) / len(x)
        fz = sum(v <= a for v in z) / len(z)
        total += abs(fx - fz) * (b - a)
    return total


def cvm_enumeration(x, z):
    """Average of (F_x - F_z)^2 over the pooled empirical measure."""
    pooled = list(x) + list(z)
    acc = 0.0
    for p in pooled:
        fx = sum(v <= p for v in x) / len(x)
        fz = sum(v <= p for v in z) / len(z)
        acc += (fx - fz) ** 2
    return acc / len(pooled)


def mmd_double_sums(x, z, h, unbiased=True):
    k = lambda a, b: math.exp(-((a - b) ** 2) / (2 * h * h))  # noqa: E731
    n, m = len(x), len(z)
    sxx = sum(k(x[i], x[j]) for i in range(n) for j in range(n) if not unbiased or i != j)
    szz = sum(k(z[i], z[j]) for i in range(m) for j in range(m) if not unbiased or i != j)
    sxz = sum(k(a, b) for a in x for b in z)
    if unbiased:
        return sxx / (n * (n - 1)) + szz / (m * (m - 1)) - 2 * sxz / (n * m)
    return sxx / n**2 + szz / m**2 - 2 * sxz / (n * m)


def energy_double_sums(x, z):
    n, m = len(x), len(z)
    exz = sum(abs(a - b) for a in x for b in z) / (n * m)
    exx = sum(abs(a - b) for a in x for b in x) / n**2
    ezz = sum(abs(a - b) for a in z for b in z) / m**2
    return 2 * exz - exx - ezz


def random_pair(seed, n, m, ties=False):
    rng = np.random.default_rng(seed)
    if ties:
        return list(rng.integers(-3, 4, n).astype(float)), list(rng.integers(-3, 4, m).astype(float))
    return list(rng.normal(size=n)), list(rng.normal(1.0, 2.0, size=m))
