"""Chain diagnostics and reusable kernel-invariance check suites.

Batch-means standard errors account for autocorrelation in retained
samples, so comparisons against exact posterior moments use an honest
error bar.  The two suite functions below are shared by the test suite
and the ``kernelcheck`` command line entry point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .families import DiagGaussianParams, TwistingParams
from .kernels import Trajectory, cis_step, csmc_step
from .models.ssm import LinearGaussianSsm, lgssm_simulate, lgssm_spec
from .models.static import ConjugateGaussianTarget, conjugate_gaussian_target
from .numkit import RngStream


def batch_means_se(x, n_batches: int = 50) -> float:
    """Standard error of the mean of a correlated chain via batch means."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2 * n_batches:
        raise ValueError("chain too short for the requested number of batches")
    size = n // n_batches
    batches = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(np.std(batches, ddof=1) / np.sqrt(n_batches))


@dataclass(frozen=True)
class CheckResult:
    """One named pass/fail outcome with its measured discrepancy."""

    name: str
    passed: bool
    detail: str


def _moment_check(name: str, chain: np.ndarray, exact: float, n_sigma: float = 4.0,
                  n_batches: int = 50) -> CheckResult:
    se = batch_means_se(chain, n_batches=n_batches)
    err = abs(float(np.mean(chain)) - exact)
    return CheckResult(name=name, passed=err <= n_sigma * se,
                       detail=f"|err| = {err:.4g} vs {n_sigma:.0f} se = {n_sigma * se:.4g}")


def default_conjugate_target(n_points: int = 10, seed: int = 2024) -> ConjugateGaussianTarget:
    """Fixed-data Gaussian mean model used by the conjugate check suite."""
    gen = RngStream(seed, 0).generator()
    z = gen.standard_normal()
    data = z + gen.standard_normal(n_points)
    return conjugate_gaussian_target(1.0, 1.0, data)


def cis_invariance_checks(n_iters: int = 50_000, burn_in: int = 1_000, S: int = 2,
                          seed: int = 7, n_sigma: float = 4.0) -> list[CheckResult]:
    """Conditional IS stationarity against the exact conjugate posterior.

    Runs one chain with a fixed overdispersed proposal and compares the
    retained-sample mean and variance with the closed-form posterior at
    ``n_sigma`` batch-means standard errors, then checks that a chain
    whose proposal equals the posterior selects particles uniformly.
    """
    target = default_conjugate_target()
    post_mean, post_var = target.posterior_mean_var()
    proposal = DiagGaussianParams(mu=[0.0], log_sigma=[0.5 * np.log(2.0)])
    gen = RngStream(seed, 1).generator()

    z = np.array([post_mean])
    chain = np.empty(n_iters)
    for k in range(burn_in):
        z, _ = cis_step(target, proposal, z, S, gen)
    for k in range(n_iters):
        z, _ = cis_step(target, proposal, z, S, gen)
        chain[k] = z[0]

    checks = [
        _moment_check("cis retained mean", chain, post_mean, n_sigma),
        _moment_check("cis retained variance", (chain - chain.mean()) ** 2, post_var, n_sigma),
    ]

    # With the posterior itself as proposal every weight equals p(x), so
    # the selected index must be uniform.
    uniform_S = 4
    exact_prop = target.posterior_params()
    gen = RngStream(seed, 2).generator()
    counts = np.zeros(uniform_S, dtype=np.int64)
    z = np.array([post_mean])
    n_draws = min(n_iters, 100_000)
    for _ in range(n_draws):
        z, system = cis_step(target, exact_prop, z, uniform_S, gen)
        counts[system.selected_index] += 1
    chi2_p = stats.chisquare(counts).pvalue
    checks.append(CheckResult(
        name="cis uniform selection at exact proposal", passed=chi2_p > 1e-3,
        detail=f"chi-square p = {chi2_p:.4g} over {n_draws} steps"))
    return checks


def default_lgssm(T: int = 10, seed: int = 2024) -> LinearGaussianSsm:
    """Fixed-data linear Gaussian model used by the sequential check suite."""
    blank = lgssm_spec(T, trans_coef=0.8, trans_var=0.5, obs_coef=1.0, obs_var=0.7,
                       prior_var=1.0)
    _, x = lgssm_simulate(blank, RngStream(seed, 3).generator())
    return lgssm_spec(T, trans_coef=0.8, trans_var=0.5, obs_coef=1.0, obs_var=0.7,
                      prior_var=1.0, data=x)


def csmc_invariance_checks(n_iters: int = 50_000, burn_in: int = 1_000, S: int = 4,
                           seed: int = 7, n_sigma: float = 4.0) -> list[CheckResult]:
    """Conditional SMC stationarity against the Kalman smoother.

    Runs one chain with fixed moderate twisting and compares each step's
    retained-state mean with the exact smoother mean at ``n_sigma``
    batch-means standard errors.
    """
    ssm = default_lgssm()
    T = ssm.T
    sm_mean, _ = ssm.kalman_smoother_moments()
    twist = TwistingParams(nu=np.full(T, 0.2), rho=np.full(T, np.log(0.3)))
    gen = RngStream(seed, 4).generator()

    traj = Trajectory(states=ssm.posterior_sample(RngStream(seed, 5).generator())[0])
    chains = np.empty((n_iters, T))
    for _ in range(burn_in):
        traj, _ = csmc_step(ssm, twist, traj, S, gen)
    for k in range(n_iters):
        traj, _ = csmc_step(ssm, twist, traj, S, gen)
        chains[k] = traj.states

    return [
        _moment_check(f"csmc marginal mean t={t + 1}", chains[:, t], sm_mean[t], n_sigma)
        for t in range(T)
    ]


def run_check_suite(target: str, n_iters: int, seed: int = 7) -> list[CheckResult]:
    """Dispatch for the command line: 'conjugate' or 'lgssm'."""
    if target == "conjugate":
        return cis_invariance_checks(n_iters=n_iters, seed=seed)
    if target == "lgssm":
        return csmc_invariance_checks(n_iters=n_iters, seed=seed)
    raise ValueError(f"unknown check target {target!r}")
