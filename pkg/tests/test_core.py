import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abayes.core import (Gamma, LogNormal, Normal, Prior, SimulatorModel, Uniform, WeightedDraws,
                         log_prior_density, marginal_from_dict, posterior_expectation, predictive_sample,
                         sample_prior)


def test_uniform_prior_draws_stay_in_support():
    prior = Prior([Uniform(0, 1), Uniform(0, 1)])
    for seed in range(20):
        th = sample_prior(prior, seed)
        assert th.shape == (2,)
        assert np.all((th >= 0) & (th <= 1))
    X = sample_prior(prior, 3, size=1000)
    assert X.shape == (1000, 2) and X.min() >= 0 and X.max() <= 1


def test_normal_prior_sample_mean_clt():
    X = sample_prior(Prior([Normal(0, 1)]), 11, size=1_000_000)
    assert abs(X.mean()) < 4e-3


@pytest.mark.parametrize("bad", [lambda: Uniform(2, 2), lambda: Uniform(3, 1), lambda: Normal(0, 0),
                                 lambda: LogNormal(0, -1), lambda: Gamma(0, 1), lambda: Gamma(1, 0)])
def test_invalid_marginals_rejected(bad):
    with pytest.raises(ValueError):
        bad()


def test_log_prior_density_examples():
    assert log_prior_density(Prior([Uniform(0, 1)]), [0.5]) == 0.0
    assert log_prior_density(Prior([Normal(0, 1)]), [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert log_prior_density(Prior([Uniform(0, 1)]), [2.0]) == -math.inf
    with pytest.raises(ValueError):
        log_prior_density(Prior([Uniform(0, 1)]), [0.1, 0.2])


def test_log_prior_density_sums_coordinates():
    prior = Prior([Normal(1, 4), Gamma(2, 3), LogNormal(0, 1), Uniform(-1, 1)])
    th = np.array([0.3, 0.7, 1.5, 0.2])
    from scipy import stats
    expected = (stats.norm.logpdf(0.3, 1, 2) + stats.gamma.logpdf(0.7, 2, scale=1 / 3)
                + stats.lognorm.logpdf(1.5, 1.0) + math.log(0.5))
    assert log_prior_density(prior, th) == pytest.approx(expected, rel=1e-12)
    assert log_prior_density(prior, [0.3, -0.1, 1.5, 0.2]) == -math.inf
    assert log_prior_density(prior, [0.3, 0.7, -1.0, 0.2]) == -math.inf


def test_marginal_from_dict():
    m = marginal_from_dict({"family": "gamma", "shape": 2, "rate": 4})
    assert m.mean == pytest.approx(0.5)
    with pytest.raises(ValueError):
        marginal_from_dict({"family": "cauchy"})


def test_weighted_draws_validation():
    with pytest.raises(ValueError):
        WeightedDraws(np.zeros((3, 1)), [0.5, 0.5])
    with pytest.raises(ValueError):
        WeightedDraws(np.zeros((2, 1)), [0.6, 0.6])
    with pytest.raises(ValueError):
        WeightedDraws(np.zeros((2, 1)), [1.5, -0.5])
    with pytest.raises(ValueError):
        WeightedDraws(np.zeros((2, 1)), [0.5, 0.5], distances=[1.0])
    d = WeightedDraws.from_unnormalized(np.arange(4.0), [1, 1, 2, 0])
    assert d.weights.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        d.draws[0, 0] = 9.0


def test_posterior_expectation_examples():
    d = WeightedDraws.equal(np.random.default_rng(0).normal(size=(17, 2)))
    assert posterior_expectation(d, lambda th: 1.0) == pytest.approx(1.0, abs=1e-12)
    d = WeightedDraws([[1.0], [3.0]], [0.5, 0.5])
    assert posterior_expectation(d, lambda th: th[0]) == 2.0


def test_posterior_expectation_names_bad_draw():
    d = WeightedDraws([[1.0], [0.0], [2.0]], [0.2, 0.3, 0.5])
    with pytest.raises(ValueError, match="index 1"):
        posterior_expectation(d, lambda th: 1.0 / th[0] if th[0] else math.nan)
    with pytest.raises(ValueError):
        posterior_expectation(WeightedDraws.equal(np.empty((0, 1))), lambda th: 1.0)


def test_posterior_expectation_exact_conjugate_draws(conj, conj_y, conj_post):
    mean, sd, _ = conj_post
    X = conj.posterior_sampler(conj_y)(100_000, 5)
    est = posterior_expectation(WeightedDraws.equal(X), lambda th: th[0])
    assert abs(est - mean) < 4 * sd / math.sqrt(len(X))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20), st.data())
def test_posterior_expectation_linear_and_permutation_invariant(values, data):
    n = len(values)
    w = np.array(data.draw(st.lists(st.floats(0.01, 10), min_size=n, max_size=n)))
    d = WeightedDraws.from_unnormalized(np.array(values)[:, None], w)
    assert posterior_expectation(d, lambda th: 1.0) == pytest.approx(1.0, abs=1e-12)
    f = lambda th: th[0]  # noqa: E731
    g = lambda th: th[0] ** 2  # noqa: E731
    lhs = posterior_expectation(d, lambda th: 2.0 * f(th) - 3.0 * g(th))
    rhs = 2.0 * posterior_expectation(d, f) - 3.0 * posterior_expectation(d, g)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-7)
    perm = np.random.default_rng(n).permutation(n)
    dp = WeightedDraws(d.draws[perm], d.weights[perm])
    assert posterior_expectation(dp, f) == pytest.approx(posterior_expectation(d, f), rel=1e-12, abs=1e-10)


def test_predictive_point_mass_matches_simulator(conj):
    model = conj.model()
    d = WeightedDraws.equal(np.full((5, 1), 2.0))
    Z = predictive_sample(model, d, 4000, 8)
    assert Z.shape == (4000, conj.n, 1)
    # each dataset is N(2, 1) noise: pooled mean and variance
    assert abs(Z.mean() - 2.0) < 4 / math.sqrt(Z.size)
    assert abs(Z.var() - 1.0) < 0.01


def test_predictive_mean_matches_analytic(conj, conj_y):
    model = conj.model()
    d = WeightedDraws.equal(conj.posterior_sampler(conj_y)(20_000, 1))
    Z = predictive_sample(model, d, 100_000, 2)
    first = Z[:, 0, 0]
    se = math.sqrt(conj.predictive_var(conj_y) / first.size)
    assert abs(first.mean() - conj.predictive_mean(conj_y)) < 4 * se


def test_predictive_edge_cases(conj):
    model = conj.model()
    assert len(predictive_sample(model, WeightedDraws.equal(np.zeros((3, 1))), 0, 1)) == 0
    with pytest.raises(ValueError):
        predictive_sample(model, WeightedDraws.equal(np.empty((0, 1))), 5, 1)


def test_simulate_is_pure(conj):
    model = conj.model()
    a = model.simulate([0.3], 42)
    b = model.simulate([0.3], 42)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, model.simulate([0.3], 43))
    with pytest.raises(ValueError):
        model.simulate([0.3, 0.1], 1)


def test_simulator_model_without_likelihood():
    m = SimulatorModel(Prior([Uniform(0, 1)]), lambda th, rng: rng.random((3, 1)))
    with pytest.raises(ValueError):
        m.loglik([0.5], np.zeros((3, 1)))
    assert m.names == ("param_1",)
