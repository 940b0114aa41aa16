import math

import numpy as np
import pytest

from scoreclimb.models.ssm import (
    LinearGaussianSsm,
    SvParams,
    lgssm_simulate,
    lgssm_spec,
    sv_simulate,
    sv_spec,
)
from scoreclimb.models.static import conjugate_gaussian_target
from scoreclimb.numkit import RngStream

HALF_LOG_2PI = 0.91893853320467274178


def dense_joint_conditioning(model: LinearGaussianSsm):
    """Oracle: condition the joint Gaussian of (z, x) on x with dense algebra."""
    T = model.T
    # z = M @ eps with eps standard normal; M from unrolling the recursion.
    M = np.zeros((T, T))
    scales = np.concatenate([[math.sqrt(model.prior_var)],
                             np.full(T - 1, math.sqrt(model.trans_var))])
    for t in range(T):
        for s in range(t + 1):
            M[t, s] = model.a ** (t - s) * scales[s]
    cov_zz = M @ M.T
    cov_xx = model.c**2 * cov_zz + model.obs_var * np.eye(T)
    cov_zx = model.c * cov_zz
    mean = cov_zx @ np.linalg.solve(cov_xx, model.data)
    cov = cov_zz - cov_zx @ np.linalg.solve(cov_xx, cov_zx.T)
    return mean, np.diag(cov)


def random_lgssm(gen, T=5):
    blank = lgssm_spec(T, trans_coef=gen.uniform(-0.9, 0.9),
                       trans_var=abs(gen.normal()) + 0.2,
                       obs_coef=gen.uniform(0.5, 1.5), obs_var=abs(gen.normal()) + 0.2,
                       prior_var=abs(gen.normal()) + 0.2)
    _, x = lgssm_simulate(blank, gen)
    return lgssm_spec(T, blank.a, blank.trans_var, blank.c, blank.obs_var,
                      blank.prior_var, data=x)


class TestKalmanOracle:
    def test_single_step_equals_conjugate_update(self):
        model = lgssm_spec(1, 0.5, 1.0, 1.0, 0.7, prior_var=1.3, data=[0.9])
        conj = conjugate_gaussian_target(1.3, 0.7, [0.9])
        sm_mean, sm_var = model.kalman_smoother_moments()
        mean, var = conj.posterior_mean_var()
        assert sm_mean[0] == pytest.approx(mean, rel=1e-12)
        assert sm_var[0] == pytest.approx(var, rel=1e-12)

    def test_decoupled_steps_match_per_step_posteriors(self, gen):
        # a = 0 makes each state an independent conjugate problem.
        x = gen.normal(size=4)
        model = lgssm_spec(4, 0.0, 1.1, 1.0, 0.6, prior_var=1.1, data=x)
        sm_mean, sm_var = model.kalman_smoother_moments()
        for t in range(4):
            mean, var = conjugate_gaussian_target(1.1, 0.6, [x[t]]).posterior_mean_var()
            assert sm_mean[t] == pytest.approx(mean, rel=1e-12)
            assert sm_var[t] == pytest.approx(var, rel=1e-12)

    def test_smoother_matches_dense_conditioning(self, gen):
        for _ in range(5):
            model = random_lgssm(gen, T=5)
            dense_mean, dense_var = dense_joint_conditioning(model)
            sm_mean, sm_var = model.kalman_smoother_moments()
            np.testing.assert_allclose(sm_mean, dense_mean, rtol=1e-8)
            np.testing.assert_allclose(sm_var, dense_var, rtol=1e-8)

    def test_log_likelihood_deterministic_under_permutation_round_trip(self, gen):
        model = random_lgssm(gen, T=8)
        before = model.kalman_log_likelihood()
        perm = gen.permutation(8)
        shuffled = model.data[perm]
        restored = np.empty_like(shuffled)
        restored[perm] = shuffled
        again = lgssm_spec(8, model.a, model.trans_var, model.c, model.obs_var,
                           model.prior_var, data=restored).kalman_log_likelihood()
        assert before == again

    def test_posterior_sampler_matches_smoother(self):
        gen = RngStream(41).generator()
        model = random_lgssm(gen, T=4)
        draws = model.posterior_sample(gen, size=40_000)
        sm_mean, sm_var = model.kalman_smoother_moments()
        se = np.sqrt(sm_var / draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - sm_mean) < 4.5 * se)
        np.testing.assert_allclose(draws.var(axis=0, ddof=1), sm_var, rtol=0.05)


class TestLgssmGradient:
    def test_matches_finite_differences(self, gen):
        h = 1e-6
        for _ in range(30):
            model = random_lgssm(gen, T=6)
            states = gen.normal(size=6)
            analytic = model.grad_theta_log_joint(states)
            theta = model.theta_unconstrained()
            numeric = np.empty_like(theta)
            for j in range(theta.size):
                up, dn = theta.copy(), theta.copy()
                up[j] += h
                dn[j] -= h
                numeric[j] = (model.with_theta(up).log_joint(states)
                              - model.with_theta(dn).log_joint(states)) / (2 * h)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-6)


class TestSvParams:
    def test_round_trip(self, gen):
        for _ in range(50):
            p = SvParams(sigma2=abs(gen.normal()) + 0.05, phi=gen.uniform(-0.99, 0.99),
                         mu=gen.normal(), beta=abs(gen.normal()) + 0.05)
            q = SvParams.from_unconstrained(p.to_unconstrained())
            assert q.sigma2 == pytest.approx(p.sigma2, abs=1e-12)
            assert q.phi == pytest.approx(p.phi, abs=1e-12)
            assert q.mu == pytest.approx(p.mu, abs=1e-12)
            assert q.beta == pytest.approx(p.beta, abs=1e-12)

    def test_constraint_violations(self):
        with pytest.raises(ValueError):
            SvParams(sigma2=-0.1, phi=0.0, mu=0.0, beta=1.0)
        with pytest.raises(ValueError):
            SvParams(sigma2=0.1, phi=1.0, mu=0.0, beta=1.0)
        with pytest.raises(ValueError):
            SvParams(sigma2=0.1, phi=0.0, mu=0.0, beta=0.0)


class TestStochasticVolatility:
    def test_memoryless_prior_variance(self):
        ssm = sv_spec(SvParams(sigma2=0.3, phi=0.0, mu=0.2, beta=1.0), [0.0])
        assert ssm.prior_mean_var() == (0.0, pytest.approx(0.3, rel=1e-14))

    def test_unit_observation_density(self):
        ssm = sv_spec(SvParams(sigma2=0.3, phi=0.5, mu=0.0, beta=1.0), [0.0])
        assert ssm.log_obs(0, 0.0) == pytest.approx(-HALF_LOG_2PI, abs=1e-14)

    def test_gradient_matches_finite_differences(self, gen):
        h = 1e-6
        for _ in range(30):
            T = int(gen.integers(2, 8))
            params = SvParams(sigma2=abs(gen.normal()) * 0.3 + 0.1,
                              phi=gen.uniform(-0.85, 0.85), mu=gen.normal() * 0.5,
                              beta=abs(gen.normal()) * 0.5 + 0.2)
            x = gen.normal(size=T)
            states = gen.normal(size=T)
            ssm = sv_spec(params, x)
            analytic = ssm.grad_theta_log_joint(states)
            theta = ssm.theta_unconstrained()
            numeric = np.empty_like(theta)
            for j in range(theta.size):
                up, dn = theta.copy(), theta.copy()
                up[j] += h
                dn[j] -= h
                numeric[j] = (ssm.with_theta(up).log_joint(states)
                              - ssm.with_theta(dn).log_joint(states)) / (2 * h)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-6)

    def test_log_joint_additivity(self, gen):
        T = 5
        params = SvParams(sigma2=0.2, phi=0.7, mu=0.1, beta=0.8)
        x = gen.normal(size=T)
        states = gen.normal(size=T)
        ssm = sv_spec(params, x)
        manual = float(ssm.log_prior(states[0]))
        for t in range(1, T):
            manual += float(ssm.log_trans(states[t], states[t - 1]))
        for t in range(T):
            manual += float(ssm.log_obs(t, states[t]))
        assert ssm.log_joint(states) == pytest.approx(manual, rel=1e-12)


class TestSvSimulate:
    def test_vanishing_innovation_freezes_state(self):
        params = SvParams(sigma2=1e-20, phi=0.9, mu=0.0, beta=1.0)
        z, _ = sv_simulate(params, 50, RngStream(5))
        assert np.max(np.abs(z)) < 1e-8

    def test_stationary_variance(self):
        params = SvParams(sigma2=0.1, phi=0.9, mu=0.0, beta=0.7)
        z, _ = sv_simulate(params, 100_000, RngStream(6))
        target = params.sigma2 / (1.0 - params.phi**2)
        assert abs(z.var() - target) / target < 0.05

    def test_fixed_seed_reproducible(self):
        params = SvParams(sigma2=0.1, phi=0.9, mu=0.0, beta=0.7)
        z1, x1 = sv_simulate(params, 20, RngStream(7))
        z2, x2 = sv_simulate(params, 20, RngStream(7))
        assert np.array_equal(z1, z2) and np.array_equal(x1, x2)
