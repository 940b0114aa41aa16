"""Stochastic approximation loops driven by posterior-invariant kernels.

The central loop never re-initializes its Markov chain: the retained
sample threads through every iteration while the variational parameters
climb the score evaluated at it.  A joint variant interleaves model
parameter updates through the gradient of the log joint at the retained
trajectory, and a self-normalized importance sampling loop provides the
biased baseline with fresh draws every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .families import DiagGaussianParams, TwistingParams, diag_gaussian_sample, twisted_score
from .gradients import fisher_gradient, msc_score_gradient, rao_blackwell_gradient, \
    snis_gradient, subset_avg_gradient
from .kernels import Trajectory, cis_step, csmc_step, smc_sweep
from .models.static import StaticTarget
from .numkit import DegenerateWeightsError, as_generator


class NonFiniteGradientError(RuntimeError):
    """A gradient went non-finite; carries the offending iteration index."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class Schedule:
    """Step-size rule mapping a gradient to a parameter increment."""

    def step(self, gradient: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def reset(self) -> None:
        raise NotImplementedError


class RobbinsMonro(Schedule):
    """Decaying steps eps_k = a / (k + b)^gamma.

    gamma in (0.5, 1] makes the steps square-summable but not summable,
    the classical convergence condition; a = 0 freezes the parameter.
    """

    def __init__(self, a: float = 0.5, b: float = 10.0, gamma: float = 0.7):
        if a < 0:
            raise ValueError("a must be nonnegative")
        if b < 0:
            raise ValueError("b must be nonnegative")
        if not 0.5 < gamma <= 1.0:
            raise ValueError("gamma must lie in (0.5, 1]")
        self.a, self.b, self.gamma = float(a), float(b), float(gamma)
        self.k = 0

    def epsilon(self, k: int) -> float:
        return self.a / (k + self.b) ** self.gamma

    def step(self, gradient: np.ndarray) -> np.ndarray:
        gradient = np.asarray(gradient, dtype=float)
        if not np.all(np.isfinite(gradient)):
            raise NonFiniteGradientError("gradient is not finite")
        self.k += 1
        return self.epsilon(self.k) * gradient

    def reset(self) -> None:
        self.k = 0


class Adam(Schedule):
    """Bias-corrected adaptive moments; returns lr * m_hat / (sqrt(v_hat) + eps)."""

    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        self.lr, self.beta1, self.beta2, self.eps = float(lr), float(beta1), float(beta2), float(eps)
        self.k = 0
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None

    def step(self, gradient: np.ndarray) -> np.ndarray:
        gradient = np.asarray(gradient, dtype=float)
        if not np.all(np.isfinite(gradient)):
            raise NonFiniteGradientError("gradient is not finite")
        if self.m is None:
            self.m = np.zeros_like(gradient)
            self.v = np.zeros_like(gradient)
        self.k += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * gradient
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * gradient**2
        m_hat = self.m / (1.0 - self.beta1**self.k)
        v_hat = self.v / (1.0 - self.beta2**self.k)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def reset(self) -> None:
        self.k = 0
        self.m = None
        self.v = None


def schedule_step(schedule: Schedule, gradient) -> np.ndarray:
    """Single increment from ``schedule`` for ``gradient``."""
    return schedule.step(gradient)


def parse_schedule(text: str) -> Schedule:
    """Build a schedule from a compact spec like ``rm:a=0.5,b=10,gamma=0.7``.

    Recognized heads: ``rm`` / ``robbins-monro`` and ``adam``; omitted
    fields take the defaults above.
    """
    head, _, rest = text.strip().partition(":")
    kwargs: dict[str, float] = {}
    if rest:
        for item in rest.split(","):
            key, _, value = item.partition("=")
            if not value:
                raise ValueError(f"malformed schedule parameter {item!r}")
            kwargs[key.strip()] = float(value)
    name = head.strip().lower()
    if name in ("rm", "robbins-monro", "robbins_monro"):
        return RobbinsMonro(**kwargs)
    if name == "adam":
        return Adam(**kwargs)
    raise ValueError(f"unknown schedule {head!r}")


@dataclass
class RunRecord:
    """Per-iteration trace entry emitted by the optimization loops."""

    iteration: int
    lam: np.ndarray
    grad_norm: float
    z: np.ndarray | None = None
    theta: np.ndarray | None = None
    grad: np.ndarray | None = None
    ess: float = float("nan")
    max_weight: float = float("nan")
    conditional_only: bool = False


@dataclass
class MscResult:
    """Final and tail-averaged variational parameters with the run trace."""

    params: DiagGaussianParams
    params_avg: DiagGaussianParams
    records: list[RunRecord] = field(default_factory=list)
    z_final: np.ndarray | None = None


@dataclass
class MscMlResult:
    """Joint run output: twists, unconstrained model parameters, trace."""

    twist: TwistingParams
    twist_avg: TwistingParams
    theta: np.ndarray
    theta_avg: np.ndarray
    records: list[RunRecord] = field(default_factory=list)
    trajectory: Trajectory | None = None


def _tail_start(n_iters: int, tail_fraction: float) -> int:
    """First 1-based iteration included in the tail average."""
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must lie in (0, 1]")
    return n_iters - int(np.ceil(tail_fraction * n_iters)) + 1


def msc_run(target: StaticTarget, lam0: DiagGaussianParams, schedule: Schedule, *,
            n_iters: int, rng, n_samples: int = 2, z0=None,
            proposal: DiagGaussianParams | None = None, estimator: str = "retained",
            tail_fraction: float = 0.5, trace_every: int = 0) -> MscResult:
    """Score climbing on a static target with the conditional IS kernel.

    The kernel proposal follows the current parameters unless a fixed
    ``proposal`` (for instance the prior) is supplied.  ``estimator``
    selects the retained-sample score or the weight-averaged one over the
    whole particle system.  The chain starts at ``z0``, by default one
    draw from the initial approximation, and is never re-initialized.
    """
    if estimator not in ("retained", "rao-blackwell"):
        raise ValueError("estimator must be 'retained' or 'rao-blackwell'")
    gen = as_generator(rng)
    d = lam0.dim
    lam_vec = lam0.as_vector().copy()
    z = np.atleast_1d(np.asarray(z0, dtype=float)) if z0 is not None \
        else diag_gaussian_sample(lam0, gen)

    records: list[RunRecord] = []
    tail_from = _tail_start(n_iters, tail_fraction)
    tail_sum = np.zeros_like(lam_vec)
    tail_n = 0

    for k in range(1, n_iters + 1):
        params = DiagGaussianParams(mu=lam_vec[:d], log_sigma=lam_vec[d:])
        prop = params if proposal is None else proposal
        try:
            z, system = cis_step(target, prop, z, n_samples, gen)
        except DegenerateWeightsError as err:
            raise DegenerateWeightsError(f"iteration {k}: {err}") from err
        if estimator == "retained":
            grad = msc_score_gradient(params, z)
        else:
            grad = rao_blackwell_gradient(params, system)
        try:
            lam_vec = lam_vec + schedule.step(grad.value)
        except NonFiniteGradientError as err:
            raise NonFiniteGradientError(f"iteration {k}: {err}", iteration=k) from err

        if k >= tail_from:
            tail_sum += lam_vec
            tail_n += 1
        if trace_every and k % trace_every == 0:
            records.append(RunRecord(
                iteration=k, lam=lam_vec.copy(), grad_norm=float(np.linalg.norm(grad.value)),
                z=z.copy(), grad=grad.value.copy(), ess=grad.ess, max_weight=grad.max_weight,
                conditional_only=system.conditional_only))

    avg_vec = tail_sum / tail_n if tail_n else lam_vec
    return MscResult(params=DiagGaussianParams.from_vector(lam_vec),
                     params_avg=DiagGaussianParams.from_vector(avg_vec),
                     records=records, z_final=z)


def snis_sgd_run(target: StaticTarget, lam0: DiagGaussianParams, schedule: Schedule, *,
                 n_iters: int, rng, n_samples: int = 2, tail_fraction: float = 0.5,
                 trace_every: int = 0) -> MscResult:
    """Gradient ascent with the self-normalized IS estimator, fresh draws each step."""
    gen = as_generator(rng)
    d = lam0.dim
    lam_vec = lam0.as_vector().copy()

    records: list[RunRecord] = []
    tail_from = _tail_start(n_iters, tail_fraction)
    tail_sum = np.zeros_like(lam_vec)
    tail_n = 0

    for k in range(1, n_iters + 1):
        params = DiagGaussianParams(mu=lam_vec[:d], log_sigma=lam_vec[d:])
        try:
            grad = snis_gradient(target, params, n_samples, gen)
        except DegenerateWeightsError as err:
            raise DegenerateWeightsError(f"iteration {k}: {err}") from err
        try:
            lam_vec = lam_vec + schedule.step(grad.value)
        except NonFiniteGradientError as err:
            raise NonFiniteGradientError(f"iteration {k}: {err}", iteration=k) from err

        if k >= tail_from:
            tail_sum += lam_vec
            tail_n += 1
        if trace_every and k % trace_every == 0:
            records.append(RunRecord(
                iteration=k, lam=lam_vec.copy(), grad_norm=float(np.linalg.norm(grad.value)),
                ess=grad.ess, max_weight=grad.max_weight))

    avg_vec = tail_sum / tail_n if tail_n else lam_vec
    return MscResult(params=DiagGaussianParams.from_vector(lam_vec),
                     params_avg=DiagGaussianParams.from_vector(avg_vec),
                     records=records)


def subset_avg_run(target, lam0: DiagGaussianParams, schedule: Schedule, *,
                   n_iters: int, rng, n_samples: int = 10, m: int = 2,
                   tail_fraction: float = 0.5, trace_every: int = 0) -> MscResult:
    """Gradient ascent with the powered-minibatch estimator on a factored target.

    The fixed point matches the perturbed posterior enumerated by
    ``perturbed_posterior_oracle``, not the true one; this loop exists to
    make that gap measurable.
    """
    gen = as_generator(rng)
    d = lam0.dim
    lam_vec = lam0.as_vector().copy()

    records: list[RunRecord] = []
    tail_from = _tail_start(n_iters, tail_fraction)
    tail_sum = np.zeros_like(lam_vec)
    tail_n = 0

    for k in range(1, n_iters + 1):
        params = DiagGaussianParams(mu=lam_vec[:d], log_sigma=lam_vec[d:])
        try:
            grad = subset_avg_gradient(target, params, n_samples, m, gen)
        except DegenerateWeightsError as err:
            raise DegenerateWeightsError(f"iteration {k}: {err}") from err
        try:
            lam_vec = lam_vec + schedule.step(grad.value)
        except NonFiniteGradientError as err:
            raise NonFiniteGradientError(f"iteration {k}: {err}", iteration=k) from err

        if k >= tail_from:
            tail_sum += lam_vec
            tail_n += 1
        if trace_every and k % trace_every == 0:
            records.append(RunRecord(
                iteration=k, lam=lam_vec.copy(), grad_norm=float(np.linalg.norm(grad.value)),
                ess=grad.ess, max_weight=grad.max_weight))

    avg_vec = tail_sum / tail_n if tail_n else lam_vec
    return MscResult(params=DiagGaussianParams.from_vector(lam_vec),
                     params_avg=DiagGaussianParams.from_vector(avg_vec),
                     records=records)


def msc_ml_run(make_ssm: Callable[[np.ndarray], object], theta0, twist0: TwistingParams,
               lam_schedule: Schedule, theta_schedule: Schedule, *, n_iters: int, rng,
               n_samples: int = 10, traj0: Trajectory | None = None,
               tail_fraction: float = 0.5, trace_every: int = 0) -> MscMlResult:
    """Joint likelihood and inclusive-KL climbing on a state-space model.

    Each iteration runs one conditional SMC sweep at the current
    (theta, twist); the retained trajectory then feeds both the twist
    score update and the log-joint gradient update, in that order.
    ``make_ssm`` maps an unconstrained parameter vector to a model bound
    to the data.  A zero-step theta schedule freezes the model and
    reduces the loop to pure variational climbing.
    """
    gen = as_generator(rng)
    theta = np.asarray(theta0, dtype=float).copy()
    twist_vec = twist0.as_vector().copy()
    n_steps = twist0.num_steps

    ssm = make_ssm(theta)
    if traj0 is None:
        system, _ = smc_sweep(ssm, twist0, n_samples, gen)
        traj = Trajectory(states=system.particles[system.selected_index].copy())
    else:
        traj = traj0

    records: list[RunRecord] = []
    tail_from = _tail_start(n_iters, tail_fraction)
    twist_sum = np.zeros_like(twist_vec)
    theta_sum = np.zeros_like(theta)
    tail_n = 0

    for k in range(1, n_iters + 1):
        twist = TwistingParams(nu=twist_vec[:n_steps], rho=twist_vec[n_steps:])
        ssm = make_ssm(theta)
        try:
            traj, system = csmc_step(ssm, twist, traj, n_samples, gen)
        except DegenerateWeightsError as err:
            raise DegenerateWeightsError(f"iteration {k}: {err}", step=err.step) from err
        s_lam = twisted_score(ssm, twist, traj.states)
        g_theta = fisher_gradient(ssm, traj)
        try:
            twist_vec = twist_vec + lam_schedule.step(s_lam)
            theta = theta + theta_schedule.step(g_theta.value)
        except NonFiniteGradientError as err:
            raise NonFiniteGradientError(f"iteration {k}: {err}", iteration=k) from err

        if k >= tail_from:
            twist_sum += twist_vec
            theta_sum += theta
            tail_n += 1
        if trace_every and k % trace_every == 0:
            records.append(RunRecord(
                iteration=k, lam=twist_vec.copy(),
                grad_norm=float(np.linalg.norm(s_lam)), z=traj.states.copy(),
                theta=theta.copy(), conditional_only=system.conditional_only))

    twist_avg = twist_sum / tail_n if tail_n else twist_vec
    theta_avg = theta_sum / tail_n if tail_n else theta
    return MscMlResult(twist=TwistingParams.from_vector(twist_vec),
                       twist_avg=TwistingParams.from_vector(twist_avg),
                       theta=theta, theta_avg=theta_avg, records=records, trajectory=traj)


def smc_marginal_likelihood(ssm, twist: TwistingParams, S: int, rng) -> float:
    """Unbiased log marginal likelihood estimate from one unconditional sweep."""
    if S < 2:
        raise ValueError("marginal likelihood estimation needs S >= 2")
    _, log_evidence = smc_sweep(ssm, twist, S, rng)
    return log_evidence
