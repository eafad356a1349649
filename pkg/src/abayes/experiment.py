"""Model and method registries and the run / compare orchestration behind the CLI."""

import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import __version__
from . import abc as _abc
from . import bsl as _bsl
from . import laplace as _laplace
from . import pseudo_marginal as _pm
from . import rng as _rng
from . import vb as _vb
from .benchmarks.conjugate import ConjugateGaussianBenchmark
from .benchmarks.lgm import GaussianLgm, PoissonLgm
from .benchmarks.normal_gamma import NormalGammaSpec, normal_gamma_data
from .benchmarks.random_effects import RandomEffectsSpec, random_effects_data
from .benchmarks.stereological import StereologicalBenchmark, pilot_distance
from .config import (BLOCK_KEYS, COMPARE_KEYS, RUN_KEYS, ConfigError, Param, check_keys, load_yaml,
                     require, validate_block)
from .core import WeightedDraws
from .diagnostics import density_curve, summarize, total_variation_1d
from .distances import FULL_DATA_DISTANCES
from .io import write_curve, write_draws, write_json
from .summaries import SummaryScale, compute_summary, mean_sd_summary, mean_summary, pilot_scale


class RunFailure(RuntimeError):
    """A method failed after configuration was accepted."""

    def __init__(self, method, stage, exc):
        super().__init__(f"{method} failed during {stage}: {type(exc).__name__}: {exc}")
        self.method, self.stage = method, stage


@dataclass
class RunResult:
    draws: WeightedDraws
    names: tuple
    chain: bool = False
    with_distance: bool = True
    extra: dict = field(default_factory=dict)    # summary-file additions
    meta: dict = field(default_factory=dict)     # manifest additions


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class _SimulatorTarget:
    """Adapter giving every simulator benchmark the same face."""

    kind = "simulator"

    def __init__(self, bench, summaries, default_summary):
        self.bench = bench
        self.model = bench.model()
        self.y = bench.observed()
        self.summaries = summaries
        self.default_summary = default_summary

    def summary(self, name):
        name = name or self.default_summary
        if name not in self.summaries:
            raise ConfigError(f"params.summary: {name!r} is not one of {sorted(self.summaries)}")
        return self.summaries[name]()

    def metric(self, name, seed, n_pilot):
        return name


class _StereoTarget(_SimulatorTarget):
    def metric(self, name, seed, n_pilot):
        return pilot_distance(name, self.model, self.y, n_pilot, seed)


def _conjugate(opts):
    bench = ConjugateGaussianBenchmark(**opts)
    target = _SimulatorTarget(bench, {"mean": mean_summary, "mean_sd": mean_sd_summary}, "mean")
    target.log_likelihood = lambda th: bench.log_likelihood(th, target.y)
    return target


def _stereological(opts):
    bench = StereologicalBenchmark(**opts)
    return _StereoTarget(bench, {"9": lambda: bench.summary("9"), "4": lambda: bench.summary("4")}, "9")


class _VbTarget:
    kind = "vb"

    def __init__(self, spec, y, names):
        self.spec, self.y, self.names = spec, y, names


def _normal_gamma(opts):
    n = opts.pop("n", 100)
    seed = opts.pop("data_seed", 7)
    return _VbTarget(NormalGammaSpec(**opts), normal_gamma_data(n=n, seed=seed), ("mu", "tau"))


def _random_effects(opts):
    n = opts.pop("n", 200)
    seed = opts.pop("data_seed", 11)
    y = random_effects_data(n=n, seed=seed)
    return _VbTarget(RandomEffectsSpec(**opts), y, ("phi",) + tuple(f"x_{i + 1}" for i in range(n)))


class _LgmTarget:
    kind = "lgm"

    def __init__(self, toy):
        self.toy = toy
        self.lgm = toy.lgm()
        self.y = toy.y


@dataclass(frozen=True)
class ModelEntry:
    name: str
    description: str
    build: Callable
    options: dict
    methods: tuple


MODELS = {
    "conjugate-gaussian": ModelEntry(
        "conjugate-gaussian", "Gaussian mean with known variance and a normal prior (analytic posterior)",
        _conjugate,
        {"n": Param("int", 50), "sigma2": Param("float", 1.0), "prior_mean": Param("float", 0.0),
         "prior_var": Param("float", 10.0), "true_mu": Param("float", 1.0), "data_seed": Param("int", 20240501)},
        ("abc-reject", "abc-mcmc", "abc-smc", "bsl", "pm-mh", "oracle")),
    "stereological": ModelEntry(
        "stereological", "Poisson count of inclusions with generalized Pareto sizes",
        _stereological, {"data_seed": Param("int", 20240601)},
        ("abc-reject", "abc-mcmc", "abc-smc", "bsl")),
    "normal-gamma": ModelEntry(
        "normal-gamma", "Gaussian data with unknown mean and precision, normal-gamma prior",
        _normal_gamma,
        {"n": Param("int", 100), "data_seed": Param("int", 7), "mu0": Param("float", 0.0),
         "kappa0": Param("float", 1.0), "a0": Param("float", 1.0), "b0": Param("float", 1.0)},
        ("cavi",)),
    "random-effects": ModelEntry(
        "random-effects", "Gaussian random-effects model with one global mean",
        _random_effects,
        {"n": Param("int", 200), "data_seed": Param("int", 11), "prior_var": Param("float", 10.0)},
        ("cavi", "svi")),
    "poisson-lgm": ModelEntry(
        "poisson-lgm", "Poisson counts with an iid Gaussian latent field (K = 20)",
        lambda o: _LgmTarget(PoissonLgm(**o)),
        {"K": Param("int", 20), "a0": Param("float", 100.0), "b0": Param("float", 10.0),
         "true_phi": Param("float", 10.0), "seed": Param("int", 5)},
        ("laplace-inla",)),
    "gaussian-lgm": ModelEntry(
        "gaussian-lgm", "Gaussian observations of an AR(1) latent field (exact reference)",
        lambda o: _LgmTarget(GaussianLgm(**o)),
        {"K": Param("int", 10), "a0": Param("float", 20.0), "b0": Param("float", 10.0),
         "learn_noise": Param("bool", False), "seed": Param("int", 3)},
        ("laplace-inla",)),
}


# ---------------------------------------------------------------------------
# Methods
# ---------------------------------------------------------------------------

_TOL = {
    "quantile": Param("float", None, help="acceptance quantile (default 0.01 when epsilon is unset)"),
    "epsilon": Param("float", None, help="fixed tolerance"),
    "summary": Param("str", None, help="summary statistic name (model default when unset)"),
    "metric": Param("str", "summary", choices=("summary",) + tuple(FULL_DATA_DISTANCES)),
    "n_pilot": Param("int", 2000, help="prior-predictive simulations for scale estimation"),
}


def _abc_config(target, p, seed, n_workers, M):
    quantile, epsilon = p["quantile"], p["epsilon"]
    if quantile is None and epsilon is None:
        quantile = _abc.DEFAULT_QUANTILE
        p["quantile"] = quantile
    if quantile is not None and epsilon is not None:
        raise ConfigError("params.epsilon: set exactly one of quantile and epsilon")
    if p["metric"] == "summary":
        summary = target.summary(p["summary"])
        p["summary"] = p["summary"] or target.default_summary
        scale = pilot_scale(target.model, summary, p["n_pilot"], seed)
        return _abc.AbcConfig(M=M, epsilon=epsilon, quantile=quantile, summary=summary, scale=scale,
                              n_workers=n_workers), summary, scale
    if p["summary"] is not None:
        raise ConfigError("params.summary: only allowed with metric 'summary'")
    metric = target.metric(p["metric"], seed, p["n_pilot"])
    return _abc.AbcConfig(M=M, epsilon=epsilon, quantile=quantile, metric=metric,
                          n_workers=n_workers), None, None


def _run_abc_reject(target, p, seed, n_workers):
    cfg, summary, scale = _abc_config(target, p, seed, n_workers, p["M"])
    out = _abc.abc_reject(target.model, target.y, cfg, seed)
    extra = {"epsilon": out.meta["epsilon"], "acceptance_rate": out.meta["acceptance_rate"]}
    if p["regression_adjust"]:
        if summary is None:
            raise ConfigError("params.regression_adjust: requires metric 'summary'")
        out = _abc.regression_adjust(out, observed_summary=compute_summary(summary, target.y))
    if scale is not None:
        extra["summary_scale"] = scale.values
    return RunResult(out, target.model.names, extra=extra, meta=dict(out.meta))


def _run_abc_mcmc(target, p, seed, n_workers):
    cfg, _, scale = _abc_config(target, p, seed, n_workers, p["M"])
    out = _abc.abc_mcmc(target.model, target.y, cfg, p["proposal_sd"], p["chain_length"], seed,
                        burn_in=p["burn_in"])
    extra = {"epsilon": out.meta["epsilon"], "acceptance_rate": out.meta["acceptance_rate"]}
    return RunResult(out, target.model.names, chain=True, extra=extra, meta=dict(out.meta))


def _run_abc_smc(target, p, seed, n_workers):
    summary = target.summary(p["summary"])
    p["summary"] = p["summary"] or target.default_summary
    scale = pilot_scale(target.model, summary, p["n_pilot"], seed)
    cfg = _abc.SmcConfig(n_particles=p["n_particles"], alpha=p["alpha"], kernel_scale=p["kernel_scale"],
                         target_epsilon=p["target_epsilon"], min_acceptance=p["min_acceptance"],
                         max_rounds=p["max_rounds"], n_workers=n_workers)
    out = _abc.abc_smc(target.model, target.y, summary, scale, cfg, seed)
    extra = {"epsilon": out.meta["epsilon"], "epsilons": out.meta["epsilons"]}
    return RunResult(out, target.model.names, extra=extra, meta=dict(out.meta))


def _run_bsl(target, p, seed, n_workers):
    summary = target.summary(p["summary"])
    p["summary"] = p["summary"] or target.default_summary
    out = _bsl.bsl_mcmc(target.model, target.y, summary, p["m"], p["chain_length"], p["proposal_sd"],
                        seed, theta0=p["theta0"], burn_in=p["burn_in"])
    meta = {k: v for k, v in out.meta.items() if k != "loglik_trace"}
    return RunResult(out, target.model.names, chain=True, with_distance=False,
                     extra={"acceptance_rate": out.meta["acceptance_rate"]}, meta=meta)


def _run_pm(target, p, seed, n_workers):
    est = _pm.lognormal_noise_estimator(target.log_likelihood, p["omega"])
    out = _pm.pm_mh(target.model.prior, est, p["proposal_sd"], p["chain_length"], seed,
                    theta0=p["theta0"], burn_in=p["burn_in"])
    meta = {k: v for k, v in out.meta.items() if k != "log_estimates"}
    return RunResult(out, target.model.names, chain=True, with_distance=False,
                     extra={"acceptance_rate": out.meta["acceptance_rate"]}, meta=meta)


def _run_oracle(target, p, seed, n_workers):
    bench = target.bench
    X = bench.posterior_sampler(target.y)(p["n_draws"], seed)
    mean, var, log_ev = bench.oracle_posterior(target.y)
    out = WeightedDraws.equal(X, meta={"method": "oracle"})
    return RunResult(out, target.model.names, with_distance=False,
                     extra={"analytic": {"mean": mean, "var": var, "log_evidence": log_ev}},
                     meta={"method": "oracle"})


def _q_draws(q, n, seed):
    return WeightedDraws.equal(q.sample(_rng.make_rng(seed, _rng.PREDICTIVE), n))


def _run_cavi(target, p, seed, n_workers):
    res = _vb.cavi(target.spec, target.y, max_iter=p["max_iter"], rel_tol=p["rel_tol"])
    extra = {"variational": {"kinds": list(res.q.kinds), "lam": res.q.lam}, "elbo": res.elbo_trace[-1],
             "elbo_trace": res.elbo_trace}
    meta = {"method": "cavi", "n_iter": res.n_iter, "converged": res.converged, "elbo_trace": res.elbo_trace}
    return RunResult(_q_draws(res.q, p["n_draws"], seed), target.names, with_distance=False,
                     extra=extra, meta=meta)


def _run_svi(target, p, seed, n_workers):
    sched = _vb.RobbinsMonro(tau=p["tau"], kappa=p["kappa"])
    res = _vb.svi(target.spec, target.y, schedule=sched, epochs=p["epochs"], seed=seed)
    q = _vb.MeanFieldFamily([res.q_global])
    drift, bound = _vb.svi_stability(res)
    extra = {"variational": {"kinds": ["normal"], "lam": q.lam, "natural": res.lam},
             "stability": {"drift": drift, "bound": bound}}
    meta = {"method": "svi", "steps": len(res.steps), "final_step_size": float(res.steps[-1])}
    return RunResult(_q_draws(q, p["n_draws"], seed), target.names[:1], with_distance=False,
                     extra=extra, meta=meta)


def _run_laplace(target, p, seed, n_workers):
    lgm, y = target.lgm, target.y
    grid = _laplace.default_grid(lgm, y, half_width=p["half_width"], n_points=p["n_points"])
    hg = _laplace.evaluate_grid(lgm, grid, y, keep_conditionals=True)
    probs = _laplace._check_boundary(hg)
    nodes = np.array(np.meshgrid(*hg.axes, indexing="ij")).reshape(lgm.hyper_dim, -1).T
    out = WeightedDraws(nodes, probs.ravel() / probs.sum())
    log_ev = _laplace.marginal_likelihood_laplace(lgm, grid, y)
    latent = []
    for k in range(1, lgm.latent_dim + 1):
        dens = _laplace.latent_marginal(lgm, k, grid, y)
        latent.append({"mean": dens.mean(), "sd": dens.sd()})
    hyper = []
    for j in range(1, lgm.hyper_dim + 1):
        dens = _laplace.hyper_marginal_grid(lgm, j, grid, y)
        hyper.append({"mean": dens.mean(), "sd": dens.sd()})
    extra = {"grid": {"center": grid.center, "scale": grid.scale, "half_width": grid.half_width,
                      "n_points": grid.n_points},
             "log_evidence": log_ev, "latent_marginals": latent, "hyper_marginals": hyper}
    names = tuple(f"phi_{j + 1}" for j in range(lgm.hyper_dim))
    return RunResult(out, names, with_distance=False, extra=extra,
                     meta={"method": "laplace-inla", "log_evidence": log_ev})


@dataclass(frozen=True)
class MethodEntry:
    name: str
    description: str
    run: Callable
    schema: dict
    budget_key: str = None


METHODS = {
    "abc-reject": MethodEntry("abc-reject", "accept/reject ABC with optional regression adjustment",
                              _run_abc_reject,
                              {"M": Param("int", 100_000), **_TOL,
                               "regression_adjust": Param("bool", False)}, "M"),
    "abc-mcmc": MethodEntry("abc-mcmc", "ABC-MCMC initialized by a pilot rejection run", _run_abc_mcmc,
                            {"M": Param("int", 100_000), **_TOL, "proposal_sd": Param("float_or_list", 0.1),
                             "chain_length": Param("int", 20_000), "burn_in": Param("int", 0)}),
    "abc-smc": MethodEntry("abc-smc", "population Monte Carlo ABC with adaptive tolerances", _run_abc_smc,
                           {"n_particles": Param("int", 1000), "alpha": Param("float", 0.5),
                            "kernel_scale": Param("float", 2.0), "target_epsilon": Param("float", None),
                            "min_acceptance": Param("float", None), "max_rounds": Param("int", 20),
                            "summary": _TOL["summary"], "n_pilot": _TOL["n_pilot"]}),
    "bsl": MethodEntry("bsl", "Bayesian synthetic likelihood MCMC", _run_bsl,
                       {"m": Param("int", _bsl.DEFAULT_M), "chain_length": Param("int", 2000),
                        "proposal_sd": Param("float_or_list", 0.1), "burn_in": Param("int", 0),
                        "theta0": Param("floats", None), "summary": _TOL["summary"]}),
    "pm-mh": MethodEntry("pm-mh", "pseudo-marginal MH with a lognormal-noise likelihood estimator", _run_pm,
                         {"omega": Param("float", 1.0), "chain_length": Param("int", 20_000),
                          "proposal_sd": Param("float_or_list", 0.3), "burn_in": Param("int", 0),
                          "theta0": Param("floats", None)}),
    "oracle": MethodEntry("oracle", "exact posterior draws (conjugate benchmark only)", _run_oracle,
                          {"n_draws": Param("int", 100_000)}),
    "cavi": MethodEntry("cavi", "coordinate-ascent variational inference", _run_cavi,
                        {"max_iter": Param("int", 10_000), "rel_tol": Param("float", 1e-8),
                         "n_draws": Param("int", 1000)}),
    "svi": MethodEntry("svi", "stochastic variational inference (global factor)", _run_svi,
                       {"epochs": Param("int", 200), "tau": Param("float", 1.0), "kappa": Param("float", 0.7),
                        "n_draws": Param("int", 1000)}),
    "laplace-inla": MethodEntry("laplace-inla", "nested Laplace approximation on a hyperparameter grid",
                                _run_laplace,
                                {"half_width": Param("float", 3.0), "n_points": Param("int", 15)}),
}


def _budgeted(method, params, budget):
    """Fill the shared simulation budget into a method block that does not set its own."""
    p = dict(params or {})
    if budget is None:
        return p
    if method == "abc-reject":
        p.setdefault("M", budget)
    elif method == "bsl":
        m = int(p.get("m", _bsl.DEFAULT_M))
        p.setdefault("chain_length", max(1, budget // m))
    elif method == "abc-mcmc":
        p.setdefault("M", budget // 2)
        p.setdefault("chain_length", budget // 2)
    return p


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def resolve_run(data, seed=None, out=None):
    """Validate a run config and return the fully resolved version."""
    check_keys("", data, RUN_KEYS)
    model_name = require(data, "model", "str")
    if model_name not in MODELS:
        raise ConfigError(f"model: unknown model {model_name!r} (see list-models)")
    method = require(data, "method", "str")
    if method not in METHODS:
        raise ConfigError(f"method: unknown method {method!r} (see list-methods)")
    entry = MODELS[model_name]
    if method not in entry.methods:
        raise ConfigError(f"method: {method!r} does not apply to model {model_name!r} "
                          f"(supported: {list(entry.methods)})")
    resolved = {
        "model": model_name,
        "model_options": validate_block("model_options", entry.options, data.get("model_options")),
        "method": method,
        "params": validate_block("params", METHODS[method].schema, data.get("params")),
        "seed": int(seed) if seed is not None else require(data, "seed", "int"),
        "output": out if out is not None else require(data, "output", "str"),
        "n_workers": int(data.get("n_workers", 1) or 1),
    }
    if resolved["n_workers"] < 1:
        raise ConfigError("n_workers: must be >= 1")
    return resolved


def _execute(resolved, target=None):
    method = resolved["method"]
    try:
        target = target or MODELS[resolved["model"]].build(dict(resolved["model_options"]))
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise RunFailure(method, "model construction", exc) from exc
    try:
        return METHODS[method].run(target, resolved["params"], resolved["seed"], resolved["n_workers"]), target
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise RunFailure(method, "sampling", exc) from exc


def _write_outputs(outdir, resolved, result, wall):
    os.makedirs(outdir, exist_ok=True)
    draws_path = os.path.join(outdir, "draws.csv")
    write_draws(draws_path, result.draws, with_distance=result.with_distance)
    summ = summarize(result.draws, names=result.names, chain=result.chain)
    summary = summ.to_dict()
    summary.update(result.extra)
    write_json(os.path.join(outdir, "summary.json"), summary)
    manifest = {
        "config": resolved,
        "results": result.meta,
        "wall_time_seconds": wall,
        "n_draws": len(result.draws),
        "abayes_version": __version__,
        "files": {"draws": "draws.csv", "summary": "summary.json"},
    }
    write_json(os.path.join(outdir, "manifest.json"), manifest)
    return summ


def run_experiment(config_path, seed=None, out=None, n_workers=None):
    """Run one method on one model and write draws, summary and manifest.

    Returns the resolved config. Raises :class:`ConfigError` for invalid
    configs and :class:`RunFailure` for failures after validation.
    """
    data = load_yaml(config_path)
    if n_workers is not None:
        data["n_workers"] = n_workers
    resolved = resolve_run(data, seed, out)
    t0 = time.perf_counter()
    result, _ = _execute(resolved)
    _write_outputs(resolved["output"], resolved, result, time.perf_counter() - t0)
    return resolved


def compare_methods(config_path, seed=None, out=None, n_workers=None):
    """Run several method blocks on one model and write a comparison table and density curves."""
    data = load_yaml(config_path)
    check_keys("", data, COMPARE_KEYS)
    model_name = require(data, "model", "str")
    if model_name not in MODELS:
        raise ConfigError(f"model: unknown model {model_name!r} (see list-models)")
    blocks = data.get("methods")
    if not isinstance(blocks, list) or len(blocks) < 2:
        raise ConfigError("methods: a list of at least two method blocks is required")
    budget = data.get("budget")
    budget = None if budget is None else require(data, "budget", "int")
    outdir = out if out is not None else require(data, "output", "str")
    seed = int(seed) if seed is not None else require(data, "seed", "int")
    workers = n_workers if n_workers is not None else int(data.get("n_workers", 1) or 1)
    curve_points = int(data.get("curve_points", 200))
    bins = int(data.get("tv_bins", 50))

    resolved_blocks = []
    labels = []
    for i, blk in enumerate(blocks):
        prefix = f"methods[{i}]."
        if not isinstance(blk, dict):
            raise ConfigError(f"methods[{i}]: expected a mapping")
        check_keys(prefix, blk, BLOCK_KEYS)
        if blk.get("model", model_name) != model_name:
            raise ConfigError(f"{prefix}model: {blk['model']!r} differs from the comparison model "
                              f"{model_name!r}")
        method = require(blk, "method", "str", prefix)
        label = str(blk.get("label", method))
        if label in labels:
            raise ConfigError(f"{prefix}label: duplicate label {label!r}")
        labels.append(label)
        run_data = {"model": model_name, "model_options": data.get("model_options"), "method": method,
                    "params": _budgeted(method, blk.get("params"), budget), "seed": seed,
                    "output": os.path.join(outdir, label), "n_workers": workers}
        try:
            resolved_blocks.append((label, resolve_run(run_data)))
        except ConfigError as exc:
            raise ConfigError(f"{prefix}{exc}") from None
    reference = data.get("reference", labels[0])
    if reference not in labels:
        raise ConfigError(f"reference: {reference!r} is not a block label {labels}")

    target = None
    results = {}
    for label, resolved in resolved_blocks:
        t0 = time.perf_counter()
        result, target = _execute(resolved, target)
        summ = _write_outputs(resolved["output"], resolved, result, time.perf_counter() - t0)
        results[label] = (result, summ)

    ref = results[reference][0].draws
    os.makedirs(os.path.join(outdir, "curves"), exist_ok=True)
    rows = []
    for label, (result, summ) in results.items():
        for j, name in enumerate(result.names):
            tv = total_variation_1d(result.draws, ref, coordinate=j, bins=bins) if j < ref.dim else math.nan
            ci = summ.intervals[0.9][j]
            rows.append({"method": label, "parameter": name, "mean": summ.mean[j], "sd": summ.sd[j],
                         "ci90_low": ci[0], "ci90_high": ci[1], "tv_to_reference": tv})
            x, dens = density_curve(result.draws, j, curve_points)
            write_curve(os.path.join(outdir, "curves", f"{label}_{name}.csv"), x, dens)
    report = {"model": model_name, "reference": reference, "seed": seed, "budget": budget, "rows": rows}
    write_json(os.path.join(outdir, "comparison.json"), report)
    with open(os.path.join(outdir, "comparison.csv"), "w") as fh:
        cols = ["method", "parameter", "mean", "sd", "ci90_low", "ci90_high", "tv_to_reference"]
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(r[c] if isinstance(r[c], str) else format(float(r[c]), ".17g") for c in cols) + "\n")
    return report
