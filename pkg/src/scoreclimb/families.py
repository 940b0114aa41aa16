"""Variational families with analytic scores.

Two families live here: diagonal Gaussians over static latent variables,
and per-step exponential-quadratic twists that tilt the Gaussian
prior/transition of a state-space model into a tractable proposal.
Scale-type parameters are stored unconstrained (log sigma, log Lambda) so
stochastic-gradient updates can never leave the feasible set; scores are
returned in those unconstrained coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import as_generator, normal_log_pdf


@dataclass(frozen=True)
class DiagGaussianParams:
    """Mean and log standard deviation of a diagonal Gaussian, one entry per dimension."""

    mu: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, dtype=float)))
        object.__setattr__(
            self, "log_sigma", np.atleast_1d(np.asarray(self.log_sigma, dtype=float))
        )
        if self.mu.shape != self.log_sigma.shape or self.mu.ndim != 1:
            raise ValueError("mu and log_sigma must be 1-D arrays of equal length")
        object.__setattr__(self, "_sigma", np.exp(self.log_sigma))

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return self._sigma

    def as_vector(self) -> np.ndarray:
        """Unconstrained parameter vector (mu first, then log_sigma)."""
        return np.concatenate([self.mu, self.log_sigma])

    @classmethod
    def from_vector(cls, v) -> "DiagGaussianParams":
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.size % 2 != 0:
            raise ValueError("parameter vector must have even length")
        d = v.size // 2
        return cls(mu=v[:d], log_sigma=v[d:])


def diag_gaussian_sample(params: DiagGaussianParams, rng, size: int | None = None):
    """Draw z = mu + sigma * eps.  Returns (d,) or, with ``size``, (size, d)."""
    gen = as_generator(rng)
    shape = (params.dim,) if size is None else (size, params.dim)
    eps = gen.standard_normal(shape)
    return params.mu + params.sigma * eps


def diag_gaussian_log_pdf(params: DiagGaussianParams, z):
    """Log density at z; a (n, d) batch of points returns a length-n vector."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != params.dim:
        raise ValueError(f"z has dimension {z.shape[-1]}, expected {params.dim}")
    terms = normal_log_pdf(z, params.mu, params.sigma)
    out = np.sum(terms, axis=-1)
    return float(out) if out.ndim == 0 else out


def diag_gaussian_score(params: DiagGaussianParams, z):
    """Gradient of the log density in (mu, log_sigma).

    Per coordinate: d/dmu = (z - mu)/sigma^2 and d/dlog_sigma =
    ((z - mu)/sigma)^2 - 1.  Shape matches ``params.as_vector()``; a
    (n, d) batch returns (n, 2d).
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != params.dim:
        raise ValueError(f"z has dimension {z.shape[-1]}, expected {params.dim}")
    sig = params.sigma
    u = (z - params.mu) / sig
    return np.concatenate([u / sig, u**2 - 1.0], axis=-1)


@dataclass(frozen=True)
class TwistingParams:
    """Per-step twist parameters (nu_t, rho_t) with Lambda_t = exp(rho_t).

    The potential exp(-Lambda_t z^2 / 2 + nu_t z) multiplies the model's
    Gaussian prior/transition; positivity of Lambda keeps the product a
    proper Gaussian for any base variance.
    """

    nu: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nu", np.atleast_1d(np.asarray(self.nu, dtype=float)))
        object.__setattr__(self, "rho", np.atleast_1d(np.asarray(self.rho, dtype=float)))
        if self.nu.shape != self.rho.shape or self.nu.ndim != 1:
            raise ValueError("nu and rho must be 1-D arrays of equal length")

    @property
    def num_steps(self) -> int:
        return self.nu.shape[0]

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.rho)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.nu, self.rho])

    @classmethod
    def from_vector(cls, v) -> "TwistingParams":
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.size % 2 != 0:
            raise ValueError("parameter vector must have even length")
        t = v.size // 2
        return cls(nu=v[:t], rho=v[t:])

    @classmethod
    def zeros(cls, num_steps: int, rho: float = -6.0) -> "TwistingParams":
        """Near-identity twisting (nu = 0, Lambda = exp(rho) small)."""
        return cls(nu=np.zeros(num_steps), rho=np.full(num_steps, rho))


def twist_log_potential(z, nu, lam):
    """Log of the exponential-quadratic twist, -lam*z^2/2 + nu*z."""
    z = np.asarray(z, dtype=float)
    return -0.5 * lam * z**2 + nu * z


def twisted_gaussian_compose(base_mean, base_var, nu, lam):
    """Moments of N(base_mean, base_var) * exp(-lam z^2/2 + nu z), normalized.

    Precision adds: 1/var = 1/base_var + lam; the mean is the
    precision-weighted combination (base_mean/base_var + nu) * var.
    Broadcasts over array arguments.
    """
    base_var = np.asarray(base_var, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(base_var <= 0.0):
        raise ValueError("base_var must be positive")
    if np.any(lam <= 0.0):
        raise ValueError("lam must be positive")
    var = 1.0 / (1.0 / base_var + lam)
    mean = (np.asarray(base_mean, dtype=float) / base_var + nu) * var
    return mean, var


def twisted_score(ssm, twist: TwistingParams, states) -> np.ndarray:
    """Gradient of the twisted proposal's log density of a trajectory.

    The proposal factorizes over time: the twisted stationary prior at
    t = 1 and twisted transitions afterwards.  Returns the gradient with
    respect to (nu_1..nu_T, rho_1..rho_T), chain rule through
    Lambda_t = exp(rho_t) applied internally.
    """
    states = np.asarray(states, dtype=float)
    T = states.shape[0]
    if T != twist.num_steps:
        raise ValueError(f"trajectory length {T} != twisting length {twist.num_steps}")

    pm, pv = ssm.prior_mean_var()
    if T > 1:
        tm, tv = ssm.trans_mean_var(states[:-1])
        base_mean = np.concatenate([[pm], np.atleast_1d(tm)])
        base_var = np.concatenate([[pv], np.broadcast_to(tv, (T - 1,))])
    else:
        base_mean = np.array([pm])
        base_var = np.array([pv])

    lam = twist.lam
    mean, var = twisted_gaussian_compose(base_mean, base_var, twist.nu, lam)
    resid = states - mean
    d_nu = resid
    d_lam = 0.5 * var - 0.5 * resid**2 - resid * mean
    d_rho = lam * d_lam
    return np.concatenate([d_nu, d_rho])
