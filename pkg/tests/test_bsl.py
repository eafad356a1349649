import math

import numpy as np
import pytest

from abayes import bsl
from abayes.core import Normal, Prior, SimulatorModel, Uniform
from abayes.diagnostics import ess
from abayes.rng import make_rng
from abayes.summaries import SummaryFn, mean_summary


def _gaussian_summary_model(k):
    # each dataset is one k-vector of N(0, 1) draws, summarized by itself
    def sim(theta, rng):
        return rng.standard_normal((k, 1))

    def batch(thetas, rng):
        return rng.standard_normal((len(thetas), k, 1))

    model = SimulatorModel(Prior([Uniform(0, 1)]), sim, simulate_batch_fn=batch)
    return model, SummaryFn(k, np.ravel, batch=lambda Y: Y.reshape(len(Y), k))


def test_constant_simulator_gets_flagged_jitter():
    model = SimulatorModel(Prior([Uniform(0, 1)]), lambda th, rng: np.full((4, 1), 2.0))
    f = SummaryFn(2, lambda y: [np.mean(y), np.max(y)])
    sl = bsl.estimate_synthetic_likelihood(model, [0.5], f, 10, 0)
    assert sl.jittered
    assert np.array_equal(sl.mu, [2.0, 2.0])
    assert np.allclose(sl.sigma, bsl.JITTER * np.eye(2), rtol=0, atol=1e-25)


def test_moments_concentrate():
    model, f = _gaussian_summary_model(2)
    sl = bsl.estimate_synthetic_likelihood(model, [0.5], f, 10_000, 1)
    assert np.max(np.abs(sl.mu)) < 0.05
    assert np.max(np.abs(sl.sigma - np.eye(2))) < 0.1
    assert np.array_equal(sl.sigma, sl.sigma.T)
    assert not sl.jittered


def test_covariance_is_unbiased_sample_covariance():
    model, f = _gaussian_summary_model(3)
    sl = bsl.estimate_synthetic_likelihood(model, [0.5], f, 25, 2)
    # recompute from the same simulations
    S = f.batch(model.simulate_many(np.full((25, 1), 0.5), make_rng(2)))
    assert np.allclose(sl.mu, S.mean(axis=0), rtol=0, atol=1e-15)
    assert np.allclose(sl.sigma, np.cov(S, rowvar=False, ddof=1), rtol=1e-12, atol=1e-15)


def test_too_few_simulations_rejected():
    model, f = _gaussian_summary_model(3)
    with pytest.raises(ValueError):
        bsl.estimate_synthetic_likelihood(model, [0.5], f, 4, 0)
    bsl.estimate_synthetic_likelihood(model, [0.5], f, 5, 0)


def _sl(mu, sigma):
    sigma = np.asarray(sigma, dtype=float)
    return bsl.SyntheticLikelihood(np.asarray(mu, dtype=float), sigma, 100, np.linalg.cholesky(sigma))


def test_synthetic_loglik_examples():
    assert bsl.synthetic_loglik(_sl([0, 0], np.eye(2)), [0, 0]) == pytest.approx(-math.log(2 * math.pi), abs=1e-15)
    assert bsl.synthetic_loglik(_sl([0], [[1.0]]), [2.0]) == pytest.approx(-0.5 * math.log(2 * math.pi) - 2, abs=1e-15)
    with pytest.raises(ValueError):
        bsl.synthetic_loglik(_sl([0, 0], np.eye(2)), [0.0])


def test_synthetic_loglik_dense_algebra_cross_check():
    rng = np.random.default_rng(3)
    for _ in range(5):
        A = rng.normal(size=(3, 3))
        sigma = A @ A.T + 0.5 * np.eye(3)
        mu, s = rng.normal(size=3), rng.normal(size=3)
        r = s - mu
        direct = -0.5 * (3 * math.log(2 * math.pi) + math.log(np.linalg.det(sigma)) + r @ np.linalg.inv(sigma) @ r)
        assert bsl.synthetic_loglik(_sl(mu, sigma), s) == pytest.approx(direct, rel=1e-12)


def test_synthetic_likelihood_estimator_consistency():
    # average of exp(loglik) over independent estimator draws agrees across seed streams
    model = SimulatorModel(Prior([Normal(0, 1)]), lambda th, rng: th[0] + rng.standard_normal((1, 1)),
                           simulate_batch_fn=lambda th, rng: th[:, 0, None, None] + rng.standard_normal((len(th), 1, 1)))
    f = mean_summary()

    def average(offset):
        vals = np.array([math.exp(bsl.synthetic_loglik(
            bsl.estimate_synthetic_likelihood(model, [0.2], f, 5, offset + i), [0.5])) for i in range(100_000)])
        return vals.mean(), vals.std(ddof=1) / math.sqrt(vals.size)

    (a, sa), (b, sb) = average(0), average(10**9)
    assert abs(a - b) < 4 * math.hypot(sa, sb)


def test_bsl_recovers_conjugate_posterior(conj, conj_y, conj_post):
    mean, sd, _ = conj_post
    out = bsl.bsl_mcmc(conj.model(), conj_y, mean_summary(), 50, 10_000, 0.3, 4, burn_in=500)
    n_eff = ess(out)
    assert abs(out.mean()[0] - mean) < 3 * out.sd()[0] / math.sqrt(n_eff)
    assert abs(out.sd()[0] / sd - 1) < 0.1
    assert 0 < out.meta["acceptance_rate"] < 1
    assert out.meta["n_simulations"] == 50 * (10_000 + 1)


def test_bsl_configuration_errors(conj, conj_y):
    with pytest.raises(ValueError):
        bsl.bsl_mcmc(conj.model(), conj_y, mean_summary(), 50, 10, 0.0, 0)
    with pytest.raises(ValueError):
        bsl.bsl_mcmc(conj.model(), conj_y, mean_summary(), 50, 0, 0.1, 0)


def test_retained_estimate_is_the_path_used(conj, conj_y):
    model, f = conj.model(), mean_summary()
    a = bsl.bsl_mcmc(model, conj_y, f, 20, 300, 0.3, 5)
    b = bsl.bsl_mcmc(model, conj_y, f, 20, 300, 0.3, 5)
    c = bsl.bsl_mcmc(model, conj_y, f, 20, 300, 0.3, 5, refresh_current=True)
    assert np.array_equal(a.draws, b.draws)
    assert not np.array_equal(a.draws, c.draws)
    # the stored log-likelihood only changes on accepted moves
    trace = a.meta["loglik_trace"]
    moved = np.r_[True, np.any(np.diff(a.draws, axis=0) != 0, axis=1)]
    assert np.all(np.diff(trace)[~moved[1:]] == 0)
