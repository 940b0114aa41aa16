"""Markov kernels that leave a posterior invariant by pinning one particle.

Both kernels run an importance-sampling sweep in which particle 1 is
forced to the retained sample from the previous iteration, every particle
(including the pinned one) is weighted, and the next retained sample is
drawn among them by normalized weight.  Iterating the kernel therefore
never re-initializes the chain.

The sequential kernel additionally resamples ancestors at every step and
redraws the pinned particle's ancestor against its splice compatibility
(ancestor sampling), using exponential-quadratic twists of the model's
Gaussian prior/transition as proposals.  Intermediate weights carry the
previous step's observation density and a twist ratio; the final step
swaps the twist for the last observation density, so every observation
enters the product exactly once.

Inner loops run at millions of steps per optimization, so the Gaussian
densities and categorical draws are inlined here rather than routed
through the validated helpers in numkit; weights stay in log space with
max subtraction throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .families import DiagGaussianParams, TwistingParams
from .models.static import StaticTarget
from .numkit import DegenerateWeightsError, as_generator, categorical_sample_many, \
    normalize_log_weights

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class ParticleSystem:
    """One kernel sweep's particles, log weights, and selection.

    ``particles`` holds states (S, d) for the static kernel or whole
    backtracked trajectories (S, T) for the sequential one; row 0 is the
    pinned particle.  ``conditional_only`` flags sweeps where every
    non-pinned weight underflowed, a valid if sticky transition.
    """

    particles: np.ndarray
    log_weights: np.ndarray
    selected_index: int
    conditional_only: bool = False
    sweep_states: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_particles(self) -> int:
        return self.log_weights.shape[0]

    def normalized_weights(self) -> np.ndarray:
        return normalize_log_weights(self.log_weights)

    def ess(self) -> float:
        w = self.normalized_weights()
        return float(1.0 / np.sum(w**2))

    def max_weight(self) -> float:
        return float(np.max(self.normalized_weights()))


@dataclass
class Trajectory:
    """A retained state path plus the ancestor bookkeeping of its sweep."""

    states: np.ndarray
    ancestors: np.ndarray | None = None
    final_index: int = 0

    def __post_init__(self):
        self.states = np.atleast_1d(np.asarray(self.states, dtype=float))

    @property
    def num_steps(self) -> int:
        return self.states.shape[0]


def multinomial_resample(weights, count: int, rng) -> np.ndarray:
    """``count`` iid ancestor indices drawn by normalized weight."""
    return categorical_sample_many(weights, count, rng)


def _select(log_w: np.ndarray, gen) -> tuple[int, float]:
    """Categorical draw from unnormalized log weights; (-inf everywhere) -> index -1.

    Returns the index and the log-sum-exp of the weights.  Boundary ties
    resolve to the lower index, matching ``categorical_sample``.
    """
    m = np.max(log_w)
    if m == -np.inf:
        return -1, -np.inf
    w = np.exp(log_w - m)
    c = np.cumsum(w)
    total = c[-1]
    j = int(np.searchsorted(c, gen.random() * total, side="left"))
    return min(j, log_w.size - 1), float(m + np.log(total))


def cis_step(target: StaticTarget, proposal: DiagGaussianParams, z_cond, S: int,
             rng) -> tuple[np.ndarray, ParticleSystem]:
    """One conditional importance sampling transition.

    Pins particle 1 to ``z_cond``, proposes S-1 fresh points from the
    proposal, weights all S by target/proposal, and returns the particle
    selected by normalized weight together with the full system.
    """
    if S < 1:
        raise ValueError("S must be at least 1")
    z_cond = np.atleast_1d(np.asarray(z_cond, dtype=float))
    if z_cond.shape[0] != target.dim:
        raise ValueError(f"conditional sample has dimension {z_cond.shape[0]}, "
                         f"expected {target.dim}")
    gen = as_generator(rng)

    mu, sigma = proposal.mu, proposal.sigma
    particles = np.empty((S, target.dim))
    particles[0] = z_cond
    if S > 1:
        particles[1:] = mu + sigma * gen.standard_normal((S - 1, target.dim))

    u = (particles - mu) / sigma
    log_q = (-0.5 * target.dim * _LOG_2PI - np.sum(proposal.log_sigma)
             - 0.5 * np.einsum("ij,ij->i", u, u))
    log_w = target.log_joint_batch(particles) - log_q

    j, _ = _select(log_w, gen)
    if j < 0:
        raise DegenerateWeightsError(
            "all CIS weights are -inf: target and proposal share no support")
    conditional_only = S > 1 and np.isfinite(log_w[0]) and not np.any(np.isfinite(log_w[1:]))

    system = ParticleSystem(particles=particles, log_weights=log_w, selected_index=j,
                            conditional_only=conditional_only)
    return particles[j].copy(), system


def _backtrack_all(states: np.ndarray, ancestors: np.ndarray) -> np.ndarray:
    """Reconstruct every particle's path; row i ends at final particle i."""
    T, S = states.shape
    trajs = np.empty((S, T))
    idx = np.arange(S)
    for t in range(T - 1, -1, -1):
        trajs[:, t] = states[t, idx]
        if t > 0:
            idx = ancestors[t - 1, idx]
    return trajs


class _SweepState:
    """Shared per-step machinery for the conditional and plain sequential sweeps."""

    __slots__ = ("ssm", "nu", "lam", "T", "gen", "states", "log_w", "obs_prev", "psi_prev")

    def __init__(self, ssm, twist: TwistingParams, gen, S: int,
                 pinned_first: float | None):
        self.ssm = ssm
        self.nu, self.lam = twist.nu, twist.lam
        self.T = ssm.T
        self.gen = gen
        pm, pv = ssm.prior_mean_var()
        m1, v1 = _compose(pm, pv, self.nu[0], self.lam[0])
        z = m1 + math.sqrt(v1) * gen.standard_normal(S)
        if pinned_first is not None:
            z[0] = pinned_first
        log_q = _gauss(z, m1, v1)
        obs0 = ssm.log_obs(0, z)
        log_prior = _gauss(z, pm, pv)
        if self.T == 1:
            self.log_w = np.asarray(log_prior + obs0 - log_q)
        else:
            psi = -0.5 * self.lam[0] * z**2 + self.nu[0] * z
            self.log_w = np.asarray(log_prior + psi - log_q)
        self.states = np.empty((self.T, S))
        self.states[0] = z
        self.obs_prev = np.asarray(obs0)
        self.psi_prev = -0.5 * self.lam[0] * z**2 + self.nu[0] * z

    def propagate(self, t: int, ancestors: np.ndarray, pinned: float | None) -> None:
        """Move to step t (0-based) given chosen ancestors; updates weights."""
        nu_t, lam_t = self.nu[t], self.lam[t]
        prev_states = self.states[t - 1]
        tm_all, tv = self.ssm.trans_mean_var(prev_states)
        qv = 1.0 / (1.0 / tv + lam_t)
        qm_all = (tm_all / tv + nu_t) * qv

        S = prev_states.shape[0]
        qm = qm_all[ancestors]
        z = qm + math.sqrt(qv) * self.gen.standard_normal(S)
        if pinned is not None:
            z[0] = pinned

        # Proposal and transition densities share the scalar-variance form.
        rq = z - qm
        log_q = -0.5 * (_LOG_2PI + math.log(qv)) - rq * rq * (0.5 / qv)
        rt = z - tm_all[ancestors]
        log_trans = -0.5 * (_LOG_2PI + math.log(tv)) - rt * rt * (0.5 / tv)
        obs_new = np.asarray(self.ssm.log_obs(t, z))
        psi_new = (-0.5 * lam_t * z + nu_t) * z
        log_w = (log_trans + self.obs_prev[ancestors] - log_q
                 - self.psi_prev[ancestors])
        if t == self.T - 1:
            log_w = log_w + obs_new
        else:
            log_w = log_w + psi_new

        self.states[t] = z
        self.log_w = log_w
        self.obs_prev = obs_new
        self.psi_prev = psi_new


def _compose(base_mean, base_var, nu, lam):
    var = 1.0 / (1.0 / base_var + lam)
    return (base_mean / base_var + nu) * var, var


def _gauss(z, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * (z - mean) ** 2 / var


def csmc_step(ssm, twist: TwistingParams, traj_cond: Trajectory, S: int, rng,
              ancestor_sampling: str = "exact") -> tuple[Trajectory, ParticleSystem]:
    """One conditional sequential Monte Carlo transition with ancestor sampling.

    The pinned particle occupies slot 0 at every step.  Free particles
    resample ancestors by the previous normalized weights; the pinned
    particle's ancestor is redrawn against its splice compatibility.
    Raises DegenerateWeightsError naming the failing 1-based step when a
    whole weight vector underflows.

    ``ancestor_sampling`` selects the pinned particle's ancestor rule:

    * ``"exact"`` (default): probability proportional to weight times the
      ratio of unnormalized targets across the splice, here
      p(x_{t-1}|z_{t-1}^j) p(z_t'|z_{t-1}^j) / psi_{t-1}(z_{t-1}^j).
      This is the rule that keeps the kernel posterior-invariant under
      the lagged-observation weights used here (verified against exact
      smoothers); it reduces to the textbook rule when twisting is off.
    * ``"proposal"``: probability proportional to weight times the twisted
      proposal density q(z_t'|z_{t-1}^j).  Coincides with "exact" only
      when the twists are optimal and is measurably biased otherwise;
      kept for reference.
    * ``"none"``: the pinned particle keeps its own history.  Always
      valid, mixes slowest.
    """
    if S < 1:
        raise ValueError("S must be at least 1")
    if ancestor_sampling not in ("exact", "proposal", "none"):
        raise ValueError("ancestor_sampling must be 'exact', 'proposal', or 'none'")
    gen = as_generator(rng)
    T = ssm.T
    cond = np.asarray(traj_cond.states, dtype=float)
    if cond.shape[0] != T:
        raise ValueError(f"conditional trajectory has length {cond.shape[0]}, expected {T}")
    if twist.num_steps != T:
        raise ValueError("twisting parameters must cover every step")

    sweep = _SweepState(ssm, twist, gen, S, pinned_first=cond[0])
    ancestors = np.empty((max(T - 1, 0), S), dtype=np.int64)
    conditional_only = False

    for t in range(1, T):
        log_w = sweep.log_w
        m = log_w.max()
        if m == -np.inf:
            raise DegenerateWeightsError(f"all CSMC weights are -inf at step {t}", step=t)
        if S > 1 and log_w[1:].max() == -np.inf:
            conditional_only = True

        w = np.exp(log_w - m)
        c = np.cumsum(w)
        a = np.empty(S, dtype=np.int64)
        if S > 1:
            a[1:] = np.searchsorted(c, gen.random(S - 1) * c[-1], side="left")
            np.minimum(a[1:], S - 1, out=a[1:])

        if ancestor_sampling == "none":
            a[0] = 0
        else:
            prev_states = sweep.states[t - 1]
            if ancestor_sampling == "exact":
                tm_all, tv = ssm.trans_mean_var(prev_states)
                log_as = (log_w + _gauss(cond[t], tm_all, tv)
                          + sweep.obs_prev - sweep.psi_prev)
            else:
                tm_all, tv = ssm.trans_mean_var(prev_states)
                qm_all, qv = _compose(tm_all, tv, sweep.nu[t], sweep.lam[t])
                log_as = log_w + _gauss(cond[t], qm_all, qv)
            a0, _ = _select(log_as, gen)
            if a0 < 0:
                raise DegenerateWeightsError(
                    f"all ancestor weights are -inf while building step {t + 1}",
                    step=t + 1)
            a[0] = a0
        ancestors[t - 1] = a
        sweep.propagate(t, a, pinned=cond[t])

    j, _ = _select(sweep.log_w, gen)
    if j < 0:
        raise DegenerateWeightsError(f"all CSMC weights are -inf at step {T}", step=T)
    if T > 1 and S > 1 and sweep.log_w[1:].max() == -np.inf:
        conditional_only = True

    trajs = _backtrack_all(sweep.states, ancestors)
    traj_new = Trajectory(states=trajs[j].copy(), ancestors=ancestors, final_index=j)
    system = ParticleSystem(particles=trajs, log_weights=sweep.log_w, selected_index=j,
                            conditional_only=conditional_only, sweep_states=sweep.states)
    return traj_new, system


def smc_sweep(ssm, twist: TwistingParams, S: int, rng) -> tuple[ParticleSystem, float]:
    """Unconditional twisted sweep: no pinned particle, no ancestor sampling.

    Multinomial resampling runs at every step.  Returns the final system
    and the log marginal likelihood estimate, the summed log mean of each
    step's unnormalized weights.
    """
    if S < 1:
        raise ValueError("S must be at least 1")
    gen = as_generator(rng)
    T = ssm.T
    if twist.num_steps != T:
        raise ValueError("twisting parameters must cover every step")

    sweep = _SweepState(ssm, twist, gen, S, pinned_first=None)
    ancestors = np.empty((max(T - 1, 0), S), dtype=np.int64)
    log_evidence = 0.0

    for t in range(1, T):
        log_w = sweep.log_w
        m = np.max(log_w)
        if m == -np.inf:
            raise DegenerateWeightsError(f"all SMC weights are -inf at step {t}", step=t)
        w = np.exp(log_w - m)
        c = np.cumsum(w)
        log_evidence += m + math.log(c[-1]) - math.log(S)
        a = np.searchsorted(c, gen.random(S) * c[-1], side="left").astype(np.int64)
        np.minimum(a, S - 1, out=a)
        ancestors[t - 1] = a
        sweep.propagate(t, a, pinned=None)

    j, lse = _select(sweep.log_w, gen)
    if j < 0:
        raise DegenerateWeightsError(f"all SMC weights are -inf at step {T}", step=T)
    log_evidence += lse - math.log(S)

    trajs = _backtrack_all(sweep.states, ancestors)
    system = ParticleSystem(particles=trajs, log_weights=sweep.log_w, selected_index=j,
                            sweep_states=sweep.states)
    return system, float(log_evidence)
