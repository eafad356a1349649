import math

import numpy as np
import pytest

from abayes import vb
from abayes.benchmarks.normal_gamma import NormalGammaSpec, normal_gamma_data
from abayes.benchmarks.random_effects import RandomEffectsSpec, random_effects_data
from abayes.vb import GammaFactor, MeanFieldFamily, NormalFactor


def conj_q(mean, var):
    return MeanFieldFamily([NormalFactor(mean, var)])


def test_factor_validation_and_lam_roundtrip():
    with pytest.raises(ValueError):
        NormalFactor(0.0, 0.0)
    with pytest.raises(ValueError):
        GammaFactor(1.0, -1.0)
    q = MeanFieldFamily([NormalFactor(1.0, 2.0), GammaFactor(3.0, 4.0)])
    assert q.lam.tolist() == [1.0, 2.0, 3.0, 4.0]
    assert MeanFieldFamily.from_lam(q.kinds, q.lam) == q
    assert np.array_equal(q.cov(), np.diag([2.0, 3.0 / 16]))


def test_elbo_at_exact_posterior_is_log_evidence(conj, conj_y, conj_post):
    mean, sd, log_ev = conj_post
    est = vb.elbo(conj.joint_logdensity, conj_q(mean, sd**2), conj_y, analytic=conj.analytic_elbo)
    assert est.method == "analytic"
    assert est.value == pytest.approx(log_ev, abs=1e-8)


@pytest.mark.parametrize("m,v", [(0.0, 1.0), (0.9, 0.01), (1.2, 0.5)])
def test_mc_elbo_below_log_evidence(conj, conj_y, conj_post, m, v):
    est = vb.elbo(conj.joint_logdensity, conj_q(m, v), conj_y, n_mc=4000, seed=1)
    assert est.method == "mc"
    assert est.value <= conj_post[2] + 3 * est.stderr
    exact = conj.analytic_elbo(conj_q(m, v), conj_y)
    assert abs(est.value - exact) < 4 * est.stderr


def test_widening_a_factor_lowers_elbo(conj, conj_y, conj_post):
    mean, sd, _ = conj_post
    values = [conj.analytic_elbo(conj_q(mean, sd**2 * f), conj_y) for f in (1.0, 1.5, 3.0)]
    assert values[0] > values[1] > values[2]


def test_mc_elbo_names_bad_draw():
    q = conj_q(0.0, 1.0)
    with pytest.raises(ValueError, match="q-draw 0"):
        vb.elbo(lambda th, y: math.nan, q, None, n_mc=10)
    with pytest.raises(ValueError):
        vb.elbo(lambda th, y: 0.0, q, None, n_mc=0)


@pytest.fixture(scope="module")
def ng():
    spec = NormalGammaSpec()
    y = normal_gamma_data()
    return spec, y, vb.cavi(spec, y), spec.exact_posterior(y)


def test_cavi_normal_gamma(ng):
    spec, y, res, exact = ng
    assert res.converged
    assert np.all(np.diff(res.elbo_trace) >= -1e-10)
    q_mu = res.q.factors[0]
    assert abs(q_mu.mean - exact.mean) < 1e-6
    assert q_mu.var <= exact.mu_var
    assert res.elbo_trace[-1] <= exact.log_evidence


def test_cavi_analytic_elbo_matches_mc(ng):
    spec, y, res, _ = ng
    est = vb.elbo(spec.joint_logdensity, res.q, y, n_mc=4000, seed=2)
    assert abs(est.value - res.elbo_trace[-1]) < 4 * est.stderr


def test_cavi_fixed_point_is_idempotent(ng):
    spec, y, _, _ = ng
    star = vb.cavi(spec, y, max_iter=200, rel_tol=-1.0).q
    again = vb.cavi(spec, y, max_iter=1, rel_tol=-1.0, init=star)
    assert again.n_iter == 1
    assert np.allclose(again.q.lam, star.lam, rtol=1e-13, atol=0)


def test_cavi_reports_zero_cross_covariance(ng):
    q = ng[2].q
    cov = q.cov()
    assert np.array_equal(cov, np.diag(np.diag(cov)))


def test_cavi_rejects_non_conjugate_and_nan():
    class NotConjugate(vb.ConjugateModelSpec):
        conjugate = False

    with pytest.raises(ValueError):
        vb.cavi(NotConjugate(), [1.0])
    with pytest.raises(ValueError):
        vb.cavi(object(), [1.0])

    class BadElbo(NormalGammaSpec):
        def elbo(self, q, y):
            return math.nan if q.factors[0].mean != self.mu0 else 0.0

    with pytest.raises(FloatingPointError):
        vb.cavi(BadElbo(), [1.0, 2.0])


def test_cavi_random_effects_matches_exact_global_posterior():
    spec, y = RandomEffectsSpec(), random_effects_data()
    res = vb.cavi(spec, y, max_iter=500, rel_tol=-1.0)
    # exact phi | y: y_i ~ N(phi, 2), phi ~ N(0, 10)
    prec = len(y) / 2 + 1 / spec.prior_var
    assert res.q.factors[0].mean == pytest.approx((y.sum() / 2) / prec, abs=1e-8)
    assert res.q.factors[0].var <= 1 / prec
    assert res.elbo_trace[-1] <= spec.log_evidence(y)


def test_svi_close_to_cavi():
    spec, y = RandomEffectsSpec(), random_effects_data()
    cavi_mean = vb.cavi(spec, y, rel_tol=1e-14).q.factors[0].mean
    res = vb.svi(spec, y, vb.RobbinsMonro(tau=1, kappa=0.7), epochs=200, seed=3)
    assert len(res.steps) == 200 * len(y)
    assert abs(res.q_global.mean - cavi_mean) < 0.05
    drift, bound = vb.svi_stability(res)
    assert drift < bound


def test_svi_unit_step_lands_on_intermediate_target():
    spec = RandomEffectsSpec()
    y = np.full(25, 1.7)
    res = vb.svi(spec, y, schedule=lambda t: 1.0, epochs=1, seed=0)
    assert np.array_equal(res.trace[0], res.lam_hat[0])
    expected = spec.alpha + 25 * np.array([0.5 * (1.7 + 0.0), 1.0])
    assert np.allclose(res.lam_hat[0], expected, rtol=1e-15)


def test_svi_single_observation_matches_conjugate_update():
    spec = RandomEffectsSpec()
    y = np.array([0.8])
    lam0 = np.array([0.6, 2.0])  # current q(phi) = N(0.3, 0.5)
    res = vb.svi(spec, y, schedule=lambda t: 1.0, epochs=1, seed=0, lam0=lam0)
    assert np.allclose(res.lam_hat[0], spec.alpha + np.array([0.5 * (0.8 + 0.3), 1.0]))
    # the same as a CAVI update of phi given the optimal local factor
    q = MeanFieldFamily([NormalFactor(0.3, 0.5), NormalFactor(0.5 * (0.8 + 0.3), 0.5)])
    direct = spec.update(0, q, y)
    assert res.q_global.mean == pytest.approx(direct.mean, rel=1e-14)
    assert res.q_global.var == pytest.approx(direct.var, rel=1e-14)


def test_svi_errors():
    spec = RandomEffectsSpec()
    for bad in (dict(kappa=0.5), dict(kappa=1.1), dict(tau=-1.0)):
        with pytest.raises(ValueError):
            vb.RobbinsMonro(**bad)
    with pytest.raises(ValueError):
        vb.svi(spec, np.array([]))
    with pytest.raises(ValueError):
        vb.svi(spec, np.ones(3), schedule=lambda t: 1.5, epochs=1)
    with pytest.raises(ValueError):
        vb.svi(NormalGammaSpec(), np.ones(3))


def test_robbins_monro_values():
    s = vb.RobbinsMonro(tau=1, kappa=0.7)
    assert s(1) == 2 ** -0.7
    assert s(9) == 10 ** -0.7


def test_svi_is_deterministic():
    spec, y = RandomEffectsSpec(), random_effects_data(n=30)
    a = vb.svi(spec, y, epochs=5, seed=4)
    b = vb.svi(spec, y, epochs=5, seed=4)
    assert np.array_equal(a.trace, b.trace)


def test_kl_mean_field_gaussian_examples():
    assert vb.kl_mean_field_gaussian(conj_q(0, 1), [0.0], [[1.0]]) == 0.0
    val = vb.kl_mean_field_gaussian(conj_q(0, 1), [0.0], [[2.0]])
    assert val == pytest.approx(0.5 * (0.5 + math.log(2) - 1), abs=1e-15)
    assert val == pytest.approx(0.0966, abs=1e-4)
    q = MeanFieldFamily([NormalFactor(0, 1), NormalFactor(0, 1)])
    assert vb.kl_mean_field_gaussian(q, [0, 0], [[1, 0.6], [0.6, 1]]) > 0
    with pytest.raises(ValueError):
        vb.kl_mean_field_gaussian(q, [0, 0], [[1, 2], [2, 1]])
    with pytest.raises(ValueError):
        vb.kl_mean_field_gaussian(MeanFieldFamily([GammaFactor(1, 1)]), [0], [[1]])
