"""Approximate Bayesian computation samplers and post-processing."""

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import logsumexp

from . import rng as _rng
from .core import WeightedDraws, as_dataset
from .distances import FULL_DATA_DISTANCES
from .summaries import SummaryFn, SummaryScale, compute_many, compute_summary, scaled_distances

# Simulations per fan-out task. Part of the determinism contract: outputs
# depend on it, the worker count does not.
CHUNK = 100_000
DEFAULT_QUANTILE = 0.01


@dataclass(frozen=True)
class AbcConfig:
    """Budget, tolerance rule and discrepancy for ABC.

    Exactly one of ``epsilon`` (fixed tolerance) or ``quantile`` (keep the
    ``ceil(q M)`` closest draws) applies; with neither given the quantile
    rule with ``q = 0.01`` is used. ``metric`` is ``"summary"`` (scaled
    Euclidean distance between summaries), one of the full-data distance
    names in :data:`abayes.distances.FULL_DATA_DISTANCES`, or a callable
    ``(z, y) -> float`` on datasets.
    """

    M: int = 10_000
    epsilon: Optional[float] = None
    quantile: Optional[float] = None
    metric: Union[str, Callable] = "summary"
    summary: Optional[SummaryFn] = None
    scale: Optional[SummaryScale] = None
    n_workers: int = 1

    def __post_init__(self):
        if int(self.M) < 1:
            raise ValueError(f"simulation budget M must be >= 1, got {self.M}")
        object.__setattr__(self, "M", int(self.M))
        if self.epsilon is not None and self.quantile is not None:
            raise ValueError("set exactly one of epsilon and quantile")
        if self.epsilon is None and self.quantile is None:
            object.__setattr__(self, "quantile", DEFAULT_QUANTILE)
        if self.epsilon is not None and not float(self.epsilon) > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.quantile is not None and not 0 < float(self.quantile) <= 1:
            raise ValueError(f"quantile must lie in (0, 1], got {self.quantile}")
        uses_summary = isinstance(self.metric, str) and self.metric == "summary"
        if isinstance(self.metric, str) and not uses_summary and self.metric not in FULL_DATA_DISTANCES:
            raise ValueError(f"unknown metric {self.metric!r}")
        if uses_summary and self.summary is None:
            raise ValueError("metric 'summary' needs a summary function")
        if not uses_summary and self.summary is not None:
            raise ValueError("a summary function is only used with metric 'summary'")
        if uses_summary and self.scale is None:
            object.__setattr__(self, "scale", SummaryScale.unit(self.summary.dim))
        if uses_summary and len(self.scale) != self.summary.dim:
            raise ValueError("scale length differs from summary dimension")

    @property
    def uses_summary(self):
        return isinstance(self.metric, str) and self.metric == "summary"

    def tolerance_rule(self):
        if self.epsilon is not None:
            return {"epsilon": float(self.epsilon)}
        return {"quantile": float(self.quantile)}


class _Discrepancy:
    """Distance of simulated datasets to the observed one under a config."""

    def __init__(self, y, cfg):
        self.cfg = cfg
        self.y = y
        if cfg.uses_summary:
            self.s_obs = compute_summary(cfg.summary, y)
        elif callable(cfg.metric):
            self.fn = cfg.metric
        else:
            base = FULL_DATA_DISTANCES[cfg.metric]
            self.fn = lambda z, yy: base(np.ravel(z), np.ravel(yy))

    def __call__(self, datasets):
        """Return ``(distances, summaries or None)`` for a batch."""
        if self.cfg.uses_summary:
            S = compute_many(self.cfg.summary, datasets)
            return scaled_distances(S, self.s_obs, self.cfg.scale), S
        return np.array([float(self.fn(z, self.y)) for z in datasets]), None


def _n_accept(q, M):
    # round() guards against q * M landing a hair above an integer
    return max(1, math.ceil(round(q * M, 9)))


def _check_finite(d, offset=0):
    bad = ~np.isfinite(d)
    if bad.any():
        raise ValueError(f"non-finite distance at draw index {offset + int(np.argmax(bad))}")


def reference_table(model, y, cfg, seed, stream=_rng.REJECT):
    """Simulate ``cfg.M`` prior-predictive pairs; returns thetas, distances, summaries."""
    y = as_dataset(y)
    disc = _Discrepancy(y, cfg)
    n_chunks = -(-cfg.M // CHUNK)

    def task(i):
        size = min(CHUNK, cfg.M - i * CHUNK)
        rng = _rng.make_rng(seed, stream, i)
        thetas = model.prior.sample(rng, size)
        d, S = disc(model.simulate_many(thetas, rng))
        return thetas, d, S

    parts = _rng.fan_out(task, n_chunks, cfg.n_workers)
    thetas = np.concatenate([p[0] for p in parts])
    d = np.concatenate([p[1] for p in parts])
    S = np.concatenate([p[2] for p in parts]) if cfg.uses_summary else None
    _check_finite(d)
    return thetas, d, S


def abc_reject(model, y, cfg, seed):
    """Accept/reject ABC over ``cfg.M`` prior-predictive simulations.

    Returns equally weighted accepted draws, in simulation order, with their
    distances (and simulated summaries when ``metric == "summary"``).
    """
    thetas, d, S = reference_table(model, y, cfg, seed)
    if cfg.epsilon is not None:
        eps = float(cfg.epsilon)
        keep = np.flatnonzero(d <= eps)
        if keep.size == 0:
            raise ValueError(
                f"no simulation fell within epsilon={eps:g} out of M={cfg.M}; "
                "use the quantile rule or a larger tolerance"
            )
    else:
        k = _n_accept(cfg.quantile, cfg.M)
        keep = np.sort(np.argsort(d, kind="stable")[:k])
        eps = float(d[keep].max())
    meta = {
        "method": "abc-reject",
        "epsilon": eps,
        "acceptance_rate": keep.size / cfg.M,
        "n_simulations": cfg.M,
        "n_accepted": int(keep.size),
        **cfg.tolerance_rule(),
    }
    return WeightedDraws.equal(
        thetas[keep], distances=d[keep], summaries=None if S is None else S[keep], meta=meta
    )


def _proposal_sd(proposal_sd, p):
    sd = np.broadcast_to(np.asarray(proposal_sd, dtype=float), (p,)).copy()
    if not np.all(np.isfinite(sd)) or np.any(sd <= 0):
        raise ValueError(f"proposal sd must be strictly positive, got {sd}")
    return sd


def abc_mcmc(model, y, cfg, proposal_sd, chain_length, seed, burn_in=0, theta0=None):
    """ABC-MCMC with one fresh simulated dataset per proposal.

    A move is accepted when the prior-ratio Metropolis test passes and the
    dataset simulated at the proposal lies within the tolerance. The
    tolerance is ``cfg.epsilon``, or under the quantile rule the realized
    tolerance of a pilot rejection run of ``cfg.M`` simulations. The chain
    starts from ``theta0`` if given (it must be within tolerance on a fresh
    simulation), else from the closest pilot draw.
    """
    y = as_dataset(y)
    p = model.dim
    sd = _proposal_sd(proposal_sd, p)
    if chain_length < 1:
        raise ValueError("chain_length must be >= 1")
    disc = _Discrepancy(y, cfg)
    rng_prop = _rng.make_rng(seed, _rng.MCMC_PROPOSAL)
    rng_sim = _rng.make_rng(seed, _rng.MCMC_SIMULATION)

    def distance_at(theta):
        d, S = disc(model.simulate_many(theta[None, :], rng_sim))
        return float(d[0]), (None if S is None else S[0])

    pilot_eps = None
    if theta0 is None or cfg.epsilon is None:
        thetas, d, S = reference_table(model, y, cfg, seed, stream=_rng.PILOT)
        if cfg.quantile is not None:
            k = _n_accept(cfg.quantile, cfg.M)
            pilot_eps = float(np.sort(d)[k - 1])
    eps = float(cfg.epsilon) if cfg.epsilon is not None else pilot_eps

    if theta0 is not None:
        theta = model.check_theta(theta0)
        if not np.isfinite(model.prior.logpdf(theta)):
            raise ValueError("theta0 lies outside the prior support")
        dist, s_cur = distance_at(theta)
        if not dist <= eps:
            raise ValueError(f"theta0 simulates at distance {dist:g} > epsilon {eps:g}")
    else:
        i = int(np.argmin(d))
        if not d[i] <= eps:
            raise ValueError(f"pilot of {cfg.M} simulations found no draw within epsilon={eps:g}")
        theta, dist = thetas[i].copy(), float(d[i])
        s_cur = None if S is None else S[i]

    lp = float(model.prior.logpdf(theta))
    chain = np.empty((chain_length, p))
    dists = np.empty(chain_length)
    summ = np.empty((chain_length, cfg.summary.dim)) if cfg.uses_summary else None
    n_moves = n_sims = n_within = 0
    for t in range(chain_length):
        prop = theta + sd * rng_prop.standard_normal(p)
        log_u = math.log(rng_prop.random())
        lp_prop = float(model.prior.logpdf(prop))
        if np.isfinite(lp_prop) and log_u < lp_prop - lp:
            d_prop, s_prop = distance_at(prop)
            n_sims += 1
            if not math.isfinite(d_prop):
                raise ValueError(f"non-finite distance at chain step {t}")
            if d_prop <= eps:
                n_within += 1
                theta, lp, dist, s_cur = prop, lp_prop, d_prop, s_prop
                n_moves += 1
        chain[t] = theta
        dists[t] = dist
        if summ is not None:
            summ[t] = s_cur
    meta = {
        "method": "abc-mcmc",
        "epsilon": eps,
        "acceptance_rate": n_moves / chain_length,
        "within_epsilon_fraction": n_within / n_sims if n_sims else 0.0,
        "n_simulations": n_sims,
        "chain_length": chain_length,
        "burn_in": int(burn_in),
        "proposal_sd": sd.tolist(),
    }
    out = WeightedDraws.equal(chain, distances=dists, summaries=summ, meta=meta)
    return out.discard(burn_in)


@dataclass(frozen=True)
class SmcConfig:
    """Population size, tolerance decay and stopping rules for ABC-SMC.

    Each round's tolerance is the ``alpha``-quantile of the previous round's
    distances (never below ``target_epsilon``). The run stops once the
    tolerance reaches ``target_epsilon``, once a round's acceptance rate
    drops below ``min_acceptance``, or after ``max_rounds`` rounds
    (the initial population counts as round 0).
    """

    n_particles: int = 1000
    alpha: float = 0.5
    kernel_scale: float = 2.0
    target_epsilon: Optional[float] = None
    min_acceptance: Optional[float] = None
    max_rounds: int = 20
    initial_epsilon: Optional[float] = None
    batch_size: Optional[int] = None
    max_simulations_per_round: int = 50_000_000
    n_workers: int = 1

    def __post_init__(self):
        if int(self.n_particles) < 2:
            raise ValueError("n_particles must be >= 2")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.kernel_scale > 0:
            raise ValueError("kernel_scale must be > 0")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.target_epsilon is not None and not self.target_epsilon > 0:
            raise ValueError("target_epsilon must be > 0")
        if self.min_acceptance is not None and not 0 < self.min_acceptance <= 1:
            raise ValueError("min_acceptance must lie in (0, 1]")


def _weighted_cov(x, w):
    m = w @ x
    c = x - m
    return (c * w[:, None]).T @ c


def _kernel_log_mixture(new, old, w_old, chol):
    """``log sum_j w_j K(new_i | old_j)`` up to an additive constant."""
    a = np.linalg.solve(chol, new.T).T
    b = np.linalg.solve(chol, old.T).T
    log_w = np.log(w_old)
    out = np.empty(len(new))
    step = max(1, 4_000_000 // max(1, len(old)))
    for s in range(0, len(new), step):
        diff = a[s:s + step, None, :] - b[None, :, :]
        out[s:s + step] = logsumexp(-0.5 * np.sum(diff**2, axis=-1) + log_w, axis=1)
    return out


def abc_smc(model, y, summary, scale, cfg, seed):
    """Population Monte Carlo ABC with a quantile-adapted tolerance schedule."""
    y = as_dataset(y)
    acfg = AbcConfig(M=1, quantile=1.0, summary=summary, scale=scale)
    disc = _Discrepancy(y, acfg)
    N, p = int(cfg.n_particles), model.dim
    B = int(cfg.batch_size or N)
    prior = model.prior

    def run_batches(t, eps, propose):
        """Collect N accepted particles from batches proposed by ``propose(rng)``."""
        thetas, dists, summs = [], [], []
        n_acc = n_prop = 0
        b = 0
        while n_acc < N:
            idxs = list(range(b, b + max(1, cfg.n_workers)))

            def task(i):
                rng = _rng.make_rng(seed, _rng.SMC, t, i)
                th = propose(rng)
                lp = prior.logpdf(th)
                ok = np.isfinite(lp)
                d = np.full(len(th), np.inf)
                S = np.full((len(th), summary.dim), np.nan)
                if ok.any():
                    d[ok], S[ok] = disc(model.simulate_many(th[ok], rng))
                    _check_finite(d[ok])
                return th, d, S, ok

            for th, d, S, ok in _rng.fan_out(lambda j: task(idxs[j]), len(idxs), cfg.n_workers):
                acc = np.flatnonzero(ok & (d <= eps))
                need = N - n_acc
                if acc.size >= need:
                    n_prop += int(acc[need - 1]) + 1
                    acc = acc[:need]
                else:
                    n_prop += len(th)
                thetas.append(th[acc])
                dists.append(d[acc])
                summs.append(S[acc])
                n_acc += acc.size
                if n_acc >= N:
                    break
                if n_prop > cfg.max_simulations_per_round:
                    raise RuntimeError(
                        f"ABC-SMC round {t} exceeded {cfg.max_simulations_per_round} proposals "
                        f"at epsilon={eps:g}"
                    )
            b += len(idxs)
        return np.concatenate(thetas), np.concatenate(dists), np.concatenate(summs), n_prop

    # round 0
    if cfg.initial_epsilon is None:
        n0 = math.ceil(N / cfg.alpha)
        rng = _rng.make_rng(seed, _rng.SMC, 0, 0)
        th0 = prior.sample(rng, n0)
        d0, S0 = disc(model.simulate_many(th0, rng))
        _check_finite(d0)
        keep = np.sort(np.argsort(d0, kind="stable")[:N])
        theta, dist, summ = th0[keep], d0[keep], S0[keep]
        eps, n_prop = float(dist.max()), n0
    else:
        eps = float(cfg.initial_epsilon)
        theta, dist, summ, n_prop = run_batches(0, eps, lambda r: prior.sample(r, B))
    w = np.full(N, 1.0 / N)
    epsilons, rates, n_sims = [eps], [N / n_prop], n_prop

    t = 1
    while t < cfg.max_rounds:
        if cfg.target_epsilon is not None and eps <= cfg.target_epsilon:
            break
        if cfg.min_acceptance is not None and rates[-1] < cfg.min_acceptance:
            break
        k = max(1, math.ceil(cfg.alpha * N))
        new_eps = float(np.sort(dist)[k - 1])
        if cfg.target_epsilon is not None:
            new_eps = max(new_eps, float(cfg.target_epsilon))
        cov = cfg.kernel_scale * _weighted_cov(theta, w)
        cov += np.eye(p) * 1e-12 * max(1.0, np.trace(cov) / p)
        chol = np.linalg.cholesky(cov)
        old_theta, old_w = theta, w

        def propose(r, old_theta=old_theta, old_w=old_w, chol=chol):
            idx = r.choice(N, size=B, p=old_w)
            return old_theta[idx] + r.standard_normal((B, p)) @ chol.T

        theta, dist, summ, n_prop = run_batches(t, new_eps, propose)
        log_w = prior.logpdf(theta) - _kernel_log_mixture(theta, old_theta, old_w, chol)
        w = np.exp(log_w - log_w.max())
        w /= w.sum()
        ess = 1.0 / np.sum(w**2)
        if ess < 2:
            raise RuntimeError(f"ABC-SMC population degenerated in round {t} (ESS = {ess:.3g})")
        eps = new_eps
        epsilons.append(eps)
        rates.append(N / n_prop)
        n_sims += n_prop
        t += 1

    meta = {
        "method": "abc-smc",
        "epsilon": eps,
        "epsilons": epsilons,
        "acceptance_rates": rates,
        "acceptance_rate": rates[-1],
        "rounds": len(epsilons),
        "n_simulations": n_sims,
    }
    return WeightedDraws(theta, w, distances=dist, summaries=summ, meta=meta)


def regression_adjust(draws, simulated_summaries=None, observed_summary=None):
    """Linear regression adjustment of accepted draws.

    Regresses each parameter on ``eta(z) - eta(y)`` by weighted least
    squares and returns ``theta - beta' (eta(z) - eta(y))``. Weights are
    untouched. A numerically singular design falls back to a ridge fit with
    ``lambda = 1e-8 * trace`` and sets ``meta["ridge_fallback"]``.
    """
    S = draws.summaries if simulated_summaries is None else np.asarray(simulated_summaries, dtype=float)
    if S is None:
        raise ValueError("draws carry no simulated summaries")
    if observed_summary is None:
        raise ValueError("observed_summary is required")
    S = np.atleast_2d(S.T).T if S.ndim == 1 else S
    if S.shape[0] != len(draws):
        raise ValueError("one simulated summary row per draw is required")
    dS = S - np.asarray(observed_summary, dtype=float).ravel()
    X = np.column_stack([np.ones(len(draws)), dS])
    w = draws.weights
    XtWX = X.T @ (X * w[:, None])
    XtWY = X.T @ (draws.draws * w[:, None])
    ridge = np.linalg.cond(XtWX) > 1e12
    if ridge:
        lam = 1e-8 * np.trace(XtWX)
        XtWX = XtWX + lam * np.eye(X.shape[1])
        warnings.warn("singular regression design; using ridge fallback", RuntimeWarning, stacklevel=2)
    beta = np.linalg.solve(XtWX, XtWY)
    adjusted = draws.draws - dS @ beta[1:]
    meta = dict(draws.meta)
    meta.update(regression_adjusted=True, ridge_fallback=bool(ridge))
    return WeightedDraws(adjusted, draws.weights, draws.distances, draws.summaries, meta)


def kl_sufficiency_bound(fisher, fisher_summary):
    """``0.5 [ln(|I_eta| / |I|) - dim + tr(I_eta^{-1} I)]`` for Fisher matrices."""
    info = np.atleast_2d(np.asarray(fisher, dtype=float))
    info_eta = np.atleast_2d(np.asarray(fisher_summary, dtype=float))
    if info.shape != info_eta.shape or info.shape[0] != info.shape[1]:
        raise ValueError("Fisher matrices must be square and of equal dimension")
    for name, a in (("I", info), ("I_eta", info_eta)):
        if not np.allclose(a, a.T):
            raise ValueError(f"{name} is not symmetric")
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise ValueError(f"{name} is not positive definite") from None
    _, logdet = np.linalg.slogdet(info)
    _, logdet_eta = np.linalg.slogdet(info_eta)
    dim = info.shape[0]
    trace = np.trace(np.linalg.solve(info_eta, info))
    return 0.5 * (logdet_eta - logdet - dim + trace)
