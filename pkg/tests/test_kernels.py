import math

import numpy as np
import pytest
from scipy import stats

from scoreclimb.diagnostics import default_conjugate_target, default_lgssm
from scoreclimb.families import (
    DiagGaussianParams,
    TwistingParams,
    twist_log_potential,
    twisted_gaussian_compose,
)
from scoreclimb.kernels import (
    ParticleSystem,
    Trajectory,
    _backtrack_all,
    cis_step,
    csmc_step,
    multinomial_resample,
    smc_sweep,
)
from scoreclimb.models.ssm import LinearGaussianSsm, lgssm_spec
from scoreclimb.models.static import StaticTarget
from scoreclimb.numkit import DegenerateWeightsError, RngStream, normal_log_pdf


class _NowhereTarget(StaticTarget):
    dim = 1

    def log_joint_batch(self, Z):
        return np.full(np.atleast_2d(Z).shape[0], -np.inf)


class _WindowTarget(StaticTarget):
    """Finite only inside |z| <= 1."""

    dim = 1

    def log_joint_batch(self, Z):
        Z = np.atleast_2d(Z)
        return np.where(np.abs(Z[:, 0]) <= 1.0, 0.0, -np.inf)


class TestCisStep:
    def test_single_particle_freezes_chain(self, gen):
        target = default_conjugate_target()
        prop = DiagGaussianParams(mu=[0.0], log_sigma=[0.0])
        z = np.array([0.37])
        for _ in range(10):
            z_new, system = cis_step(target, prop, z, 1, gen)
            assert np.array_equal(z_new, z)
            assert system.n_particles == 1
            z = z_new

    def test_exact_proposal_gives_uniform_weights(self, gen):
        target = default_conjugate_target()
        prop = target.posterior_params()
        z0 = np.array([target.posterior_mean_var()[0]])
        _, system = cis_step(target, prop, z0, 8, gen)
        np.testing.assert_allclose(system.normalized_weights(), 1.0 / 8.0, rtol=1e-9)

    def test_conditional_pinning_bitwise(self, gen):
        target = default_conjugate_target()
        prop = DiagGaussianParams(mu=[0.0], log_sigma=[0.3])
        z = np.array([0.123456789])
        for _ in range(50):
            z_new, system = cis_step(target, prop, z, 4, gen)
            assert system.particles[0, 0] == z[0]
            z = z_new

    def test_all_degenerate_raises(self, gen):
        prop = DiagGaussianParams(mu=[0.0], log_sigma=[0.0])
        with pytest.raises(DegenerateWeightsError):
            cis_step(_NowhereTarget(), prop, np.array([0.0]), 4, gen)

    def test_only_conditional_finite_is_sticky_not_error(self, gen):
        target = _WindowTarget()
        far_prop = DiagGaussianParams(mu=[100.0], log_sigma=[-3.0])
        z_new, system = cis_step(target, far_prop, np.array([0.2]), 6, gen)
        assert z_new[0] == 0.2
        assert system.conditional_only
        assert system.selected_index == 0

    def test_dimension_mismatch(self, gen):
        target = default_conjugate_target()
        prop = DiagGaussianParams(mu=[0.0], log_sigma=[0.0])
        with pytest.raises(ValueError):
            cis_step(target, prop, np.array([0.0, 0.0]), 2, gen)

    def test_chain_stationarity_short(self):
        # Quick stationarity sanity; the full-length run is an acceptance criterion.
        target = default_conjugate_target()
        post_mean, post_var = target.posterior_mean_var()
        prop = DiagGaussianParams(mu=[0.0], log_sigma=[0.5 * math.log(2.0)])
        gen = RngStream(13).generator()
        z = np.array([post_mean])
        xs = np.empty(20_000)
        for k in range(2_000):
            z, _ = cis_step(target, prop, z, 2, gen)
        for k in range(xs.size):
            z, _ = cis_step(target, prop, z, 2, gen)
            xs[k] = z[0]
        assert abs(xs.mean() - post_mean) < 0.05
        assert abs(xs.var() - post_var) / post_var < 0.15

    def test_invariance_kolmogorov_smirnov(self):
        # Start at the posterior; the marginal after any k steps must stay there.
        target = default_conjugate_target()
        post_mean, post_var = target.posterior_mean_var()
        prop = DiagGaussianParams(mu=[0.0], log_sigma=[0.5 * math.log(2.0)])
        n_rep = 10_000
        gen = RngStream(23).generator()
        init = post_mean + math.sqrt(post_var) * gen.standard_normal(n_rep)
        reference = post_mean + math.sqrt(post_var) * gen.standard_normal(n_rep)
        ks = np.sort(np.array([1, 5, 25]))
        state = init[:, None].copy()
        done = 0
        for k_target in ks:
            for _ in range(k_target - done):
                for i in range(n_rep):
                    state[i], _ = cis_step(target, prop, state[i], 2, gen)
            done = k_target
            pvalue = stats.ks_2samp(state[:, 0], reference).pvalue
            assert pvalue > 1e-3, f"KS rejected at k={k_target}: p={pvalue:.2e}"


def zero_twist(T):
    return TwistingParams(nu=np.zeros(T), rho=np.full(T, -30.0))


class _ObsKilledLgssm(LinearGaussianSsm):
    """Observation density forced to -inf at one step for every state."""

    def log_obs(self, t_idx, z_t):
        if t_idx == 1:
            return np.where(np.isfinite(np.asarray(z_t, dtype=float)), -np.inf, -np.inf)
        return super().log_obs(t_idx, z_t)


class TestCsmcStep:
    def test_single_particle_returns_conditional(self, gen):
        ssm = default_lgssm()
        twist = TwistingParams(nu=np.full(ssm.T, 0.1), rho=np.full(ssm.T, -1.0))
        cond = Trajectory(states=np.linspace(-1, 1, ssm.T))
        traj, system = csmc_step(ssm, twist, cond, 1, gen)
        assert np.array_equal(traj.states, cond.states)
        assert system.selected_index == 0

    def test_statewise_pinning_bitwise(self, gen):
        ssm = default_lgssm()
        twist = TwistingParams(nu=np.full(ssm.T, 0.2), rho=np.full(ssm.T, -0.5))
        cond = Trajectory(states=np.linspace(-0.5, 0.7, ssm.T))
        traj, system = csmc_step(ssm, twist, cond, 5, gen)
        assert np.array_equal(system.sweep_states[:, 0], cond.states)

    def test_zero_twist_weights_reduce_to_lagged_bootstrap(self, gen):
        # Both weight expressions evaluated directly at random states.
        ssm = default_lgssm()
        nu, rho = 0.0, -30.0
        lam = math.exp(rho)
        for _ in range(20):
            z_prev, z_t = gen.normal(size=2)
            t = int(gen.integers(1, ssm.T - 1))
            tm, tv = ssm.trans_mean_var(z_prev)
            qm, qv = twisted_gaussian_compose(tm, tv, nu, lam)
            full = (float(ssm.log_trans(z_t, z_prev)) + float(ssm.log_obs(t - 1, z_prev))
                    - normal_log_pdf(z_t, qm, math.sqrt(qv))
                    + twist_log_potential(z_t, nu, lam)
                    - twist_log_potential(z_prev, nu, lam))
            reduced = float(ssm.log_obs(t - 1, z_prev))
            assert full == pytest.approx(reduced, abs=1e-8)

    def test_backtracked_trajectories_consistent(self, gen):
        ssm = default_lgssm()
        twist = TwistingParams(nu=np.full(ssm.T, 0.2), rho=np.full(ssm.T, -0.5))
        cond = Trajectory(states=np.zeros(ssm.T))
        traj, system = csmc_step(ssm, twist, cond, 4, gen)
        rebuilt = _backtrack_all(system.sweep_states, traj.ancestors)
        assert np.array_equal(system.particles, rebuilt)
        assert np.array_equal(traj.states, rebuilt[traj.final_index])

    def test_degenerate_step_reports_index(self, gen):
        base = default_lgssm()
        ssm = _ObsKilledLgssm(a=base.a, trans_var=base.trans_var, c=base.c,
                              obs_var=base.obs_var, prior_var=base.prior_var,
                              data=base.data)
        twist = TwistingParams(nu=np.zeros(ssm.T), rho=np.full(ssm.T, -2.0))
        cond = Trajectory(states=np.zeros(ssm.T))
        with pytest.raises(DegenerateWeightsError) as excinfo:
            csmc_step(ssm, twist, cond, 4, gen)
        # x_2's density enters the weights of step 3 (1-based).
        assert excinfo.value.step == 3

    def test_length_mismatch(self, gen):
        ssm = default_lgssm()
        twist = zero_twist(ssm.T)
        with pytest.raises(ValueError):
            csmc_step(ssm, twist, Trajectory(states=np.zeros(ssm.T - 1)), 4, gen)

    def test_invariance_fixed_step_counts(self):
        # Start trajectories at the exact posterior; after k kernel
        # applications each state's marginal mean must match the smoother.
        ssm = default_lgssm()
        sm_mean, sm_var = ssm.kalman_smoother_moments()
        twist = TwistingParams(nu=np.full(ssm.T, 0.2), rho=np.full(ssm.T, np.log(0.3)))
        n_rep = 2_000
        gen = RngStream(29).generator()
        starts = ssm.posterior_sample(gen, size=n_rep)
        trajs = [Trajectory(states=starts[i]) for i in range(n_rep)]
        done = 0
        for k_target in (1, 5):
            for _ in range(k_target - done):
                for i in range(n_rep):
                    trajs[i], _ = csmc_step(ssm, twist, trajs[i], 4, gen)
            done = k_target
            finals = np.array([t.states for t in trajs])
            se = finals.std(axis=0, ddof=1) / math.sqrt(n_rep)
            err = np.abs(finals.mean(axis=0) - sm_mean)
            assert np.all(err < 4.0 * se), f"k={k_target}: max z = {np.max(err / se):.2f}"

    def test_ancestor_sampling_variants_run(self, gen):
        ssm = default_lgssm()
        twist = TwistingParams(nu=np.full(ssm.T, 0.1), rho=np.full(ssm.T, -1.0))
        cond = Trajectory(states=np.zeros(ssm.T))
        for mode in ("exact", "proposal", "none"):
            traj, _ = csmc_step(ssm, twist, cond, 4, gen, ancestor_sampling=mode)
            assert traj.states.shape == (ssm.T,)
        with pytest.raises(ValueError):
            csmc_step(ssm, twist, cond, 4, gen, ancestor_sampling="bogus")

    def test_keep_history_mode_preserves_conditional(self, gen):
        # Without ancestor sampling the pinned path survives whole.
        ssm = default_lgssm()
        twist = TwistingParams(nu=np.full(ssm.T, 0.1), rho=np.full(ssm.T, -1.0))
        cond = Trajectory(states=np.linspace(0.0, 1.0, ssm.T))
        _, system = csmc_step(ssm, twist, cond, 4, gen, ancestor_sampling="none")
        assert np.array_equal(system.particles[0], cond.states)


class TestMultinomialResample:
    def test_point_mass(self, gen):
        assert np.all(multinomial_resample([1.0, 0.0, 0.0], 1000, gen) == 0)

    def test_uniform_frequencies(self):
        gen = RngStream(31).generator()
        S = 4
        idx = multinomial_resample(np.full(S, 0.25), 100_000, gen)
        freqs = np.bincount(idx, minlength=S) / idx.size
        bound = 3.0 * math.sqrt(0.25 * 0.75 / idx.size)
        assert np.all(np.abs(freqs - 0.25) < bound)

    def test_reproducible(self):
        a = multinomial_resample([0.3, 0.7], 100, RngStream(5).generator())
        b = multinomial_resample([0.3, 0.7], 100, RngStream(5).generator())
        assert np.array_equal(a, b)

    def test_invalid_probabilities(self, gen):
        with pytest.raises(ValueError):
            multinomial_resample([-0.1, 1.1], 10, gen)


class TestSmcSweep:
    def test_single_step_is_importance_sampling(self):
        # T = 1: the evidence estimate is a plain IS average with exact
        # closed form N(x; 0, c^2 p0 + r) for its expectation.
        model = lgssm_spec(1, 0.9, 0.4, 1.2, 0.5, prior_var=1.1, data=[0.7])
        twist = zero_twist(1)
        exact = normal_log_pdf(0.7, 0.0, math.sqrt(1.2**2 * 1.1 + 0.5))
        gen = RngStream(37).generator()
        estimates = np.array([smc_sweep(model, twist, 512, gen)[1] for _ in range(200)])
        evidences = np.exp(estimates)
        se = evidences.std(ddof=1) / math.sqrt(estimates.size)
        assert abs(evidences.mean() - math.exp(exact)) < 3.0 * se

    def test_particle_system_shapes(self, gen):
        ssm = default_lgssm()
        system, log_ev = smc_sweep(ssm, zero_twist(ssm.T), 16, gen)
        assert system.particles.shape == (16, ssm.T)
        assert isinstance(log_ev, float)
        assert np.isfinite(log_ev)
