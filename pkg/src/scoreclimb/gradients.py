"""Stochastic gradient estimators for inclusive-KL and likelihood climbing.

Every estimator returns an ascent direction on the objective being
maximized (negative cross entropy for variational parameters, log
marginal likelihood for model parameters), so the optimization loops can
treat them interchangeably.  Weight diagnostics ride along on every
estimate because degeneracy is invisible in the gradient value itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .families import DiagGaussianParams, diag_gaussian_log_pdf, diag_gaussian_sample, \
    diag_gaussian_score
from .kernels import ParticleSystem, Trajectory
from .models.static import ConjugateGaussianTarget, StaticTarget
from .numkit import DegenerateWeightsError, as_generator, normalize_log_weights

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GradEstimate:
    """Gradient value in unconstrained coordinates plus weight diagnostics."""

    value: np.ndarray
    ess: float
    max_weight: float


def _diagnostics(w_bar: np.ndarray) -> tuple[float, float]:
    return float(1.0 / np.sum(w_bar**2)), float(np.max(w_bar))


def msc_score_gradient(params: DiagGaussianParams, z_retained) -> GradEstimate:
    """Score of the variational family at the kernel's retained sample."""
    value = diag_gaussian_score(params, np.asarray(z_retained, dtype=float))
    return GradEstimate(value=value, ess=1.0, max_weight=1.0)


def rao_blackwell_gradient(params: DiagGaussianParams,
                           system: ParticleSystem) -> GradEstimate:
    """Weight-averaged score over all particles of one kernel sweep."""
    w_bar = normalize_log_weights(system.log_weights)
    scores = diag_gaussian_score(params, system.particles)
    ess, max_w = _diagnostics(w_bar)
    return GradEstimate(value=w_bar @ scores, ess=ess, max_weight=max_w)


def snis_gradient(target: StaticTarget, params: DiagGaussianParams, S: int,
                  rng) -> GradEstimate:
    """Self-normalized importance sampling estimate from S fresh proposal draws.

    Consistent as S grows but biased for any finite S; kept as the
    baseline the conditional kernels are measured against.
    """
    if S < 1:
        raise ValueError("S must be at least 1")
    gen = as_generator(rng)
    mu, sigma = params.mu, params.sigma
    eps = gen.standard_normal((S, params.dim))
    Z = mu + sigma * eps
    log_q = (-0.5 * params.dim * _LOG_2PI - np.sum(params.log_sigma)
             - 0.5 * np.einsum("ij,ij->i", eps, eps))
    log_w = target.log_joint_batch(Z) - log_q
    m = np.max(log_w)
    if m == -np.inf:
        raise DegenerateWeightsError("all SNIS weights are -inf")
    w = np.exp(log_w - m)
    w_bar = w / np.sum(w)
    scores = np.concatenate([eps / sigma, eps * eps - 1.0], axis=-1)
    ess, max_w = _diagnostics(w_bar)
    return GradEstimate(value=w_bar @ scores, ess=ess, max_weight=max_w)


def fisher_gradient(ssm, trajectory) -> GradEstimate:
    """Gradient of the log joint in the model's unconstrained parameters.

    Evaluated at a posterior-invariant kernel's retained trajectory this
    is a consistent estimate of the marginal likelihood gradient.
    """
    states = trajectory.states if isinstance(trajectory, Trajectory) else trajectory
    value = ssm.grad_theta_log_joint(np.asarray(states, dtype=float))
    return GradEstimate(value=value, ess=1.0, max_weight=1.0)


def subset_avg_gradient(target: ConjugateGaussianTarget, params: DiagGaussianParams,
                        S: int, m: int, rng) -> GradEstimate:
    """Minibatch estimator that powers the likelihood of m points up by n/m.

    Weights are the raw (unnormalized) ratios prior * minibatch
    likelihood^(n/m) / proposal; the likelihood power is applied in log
    space.  Its stationary points match a perturbed posterior rather than
    the true one, which ``perturbed_posterior_oracle`` quantifies exactly.
    """
    n = target.n_points
    if not 1 <= m <= n:
        raise ValueError(f"minibatch size m={m} must lie in [1, n={n}]")
    if S < 1:
        raise ValueError("S must be at least 1")
    gen = as_generator(rng)
    batch = gen.choice(n, size=m, replace=False)
    Z = diag_gaussian_sample(params, gen, size=S)
    log_w = (target.log_prior(Z) + (n / m) * target.log_lik_subset(Z, batch)
             - diag_gaussian_log_pdf(params, Z))
    if not np.any(np.isfinite(log_w)):
        raise DegenerateWeightsError("all minibatch weights are -inf")
    w = np.exp(log_w)
    scores = diag_gaussian_score(params, Z)
    value = (w @ scores) / S
    ess, max_w = _diagnostics(normalize_log_weights(log_w))
    return GradEstimate(value=value, ess=ess, max_weight=max_w)


def perturbed_posterior_oracle(target: ConjugateGaussianTarget, m: int,
                               max_subsets: int = 10_000) -> tuple[float, float]:
    """Exact moments of the minibatch estimator's fixed-point distribution.

    Enumerates every size-m subset; each term prior * likelihood^(n/m) is
    an unnormalized Gaussian, so the fixed point is a Gaussian mixture
    with closed-form moments.  Refuses combinatorially infeasible cases.
    """
    n = target.n_points
    if not 1 <= m <= n:
        raise ValueError(f"minibatch size m={m} must lie in [1, n={n}]")
    n_subsets = comb(n, m)
    if n_subsets > max_subsets:
        raise ValueError(f"C({n},{m}) = {n_subsets} subsets exceeds limit {max_subsets}")

    v0, v = target.prior_var, target.noise_var
    x = target.data
    power = n / m
    precision = 1.0 / v0 + n / v

    means = np.empty(n_subsets)
    log_mass = np.empty(n_subsets)
    for i, M in enumerate(combinations(range(n), m)):
        idx = np.array(M)
        b = power * np.sum(x[idx]) / v
        means[i] = b / precision
        log_mass[i] = b**2 / (2.0 * precision) - power * np.sum(x[idx] ** 2) / (2.0 * v)

    w = normalize_log_weights(log_mass)
    comp_var = 1.0 / precision
    mean = float(w @ means)
    var = float(w @ (comp_var + means**2) - mean**2)
    return mean, var
