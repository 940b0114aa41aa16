"""Scalar state-space models with conditionally Gaussian dynamics.

Both models expose the same surface: prior/transition moments for
building twisted proposals, pointwise log densities, the assembled
log joint, and its gradient in unconstrained parameter coordinates.
The linear Gaussian model doubles as an exact oracle through its
Kalman filter, smoother, and posterior sampler.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..numkit import as_generator, normal_log_pdf

_LOG_2PI = np.log(2.0 * np.pi)


class GaussianSsm:
    """Interface shared by the state-space models in this module.

    ``T`` observations are stored 0-indexed; time step t in 1..T maps to
    index t-1.  Density methods broadcast over particle arrays.
    """

    T: int
    data: np.ndarray

    def prior_mean_var(self) -> tuple[float, float]:
        raise NotImplementedError

    def trans_mean_var(self, z_prev):
        raise NotImplementedError

    def log_prior(self, z1):
        pm, pv = self.prior_mean_var()
        return normal_log_pdf(z1, pm, np.sqrt(pv))

    def log_trans(self, z_t, z_prev):
        tm, tv = self.trans_mean_var(z_prev)
        return normal_log_pdf(z_t, tm, np.sqrt(tv))

    def log_obs(self, t_idx: int, z_t):
        raise NotImplementedError

    def log_joint(self, states) -> float:
        """log p(z_{1:T}, x_{1:T}) assembled from prior, transitions, observations."""
        states = np.asarray(states, dtype=float)
        if states.shape[0] != self.T:
            raise ValueError(f"trajectory length {states.shape[0]} != T = {self.T}")
        total = float(self.log_prior(states[0]))
        if self.T > 1:
            total += float(np.sum(self.log_trans(states[1:], states[:-1])))
        total += float(sum(self.log_obs(t, states[t]) for t in range(self.T)))
        return total

    def theta_unconstrained(self) -> np.ndarray:
        raise NotImplementedError

    def with_theta(self, theta) -> "GaussianSsm":
        raise NotImplementedError

    def grad_theta_log_joint(self, states) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class LinearGaussianSsm(GaussianSsm):
    """z_1 ~ N(0, prior_var); z_t = a z_{t-1} + N(0, trans_var); x_t = c z_t + N(0, obs_var).

    Free parameters for likelihood climbing are (a, log trans_var,
    log obs_var); c and prior_var stay fixed.  Kalman recursions below are
    the exact oracle used to validate sequential kernels.
    """

    a: float
    trans_var: float
    c: float
    obs_var: float
    prior_var: float
    data: np.ndarray

    def __post_init__(self):
        if min(self.trans_var, self.obs_var, self.prior_var) <= 0.0:
            raise ValueError("variances must be positive")
        object.__setattr__(self, "data", np.atleast_1d(np.asarray(self.data, dtype=float)))
        object.__setattr__(self, "_obs_const",
                           -0.5 * (_LOG_2PI + np.log(self.obs_var)))
        object.__setattr__(self, "_obs_half_prec", 0.5 / self.obs_var)

    @property
    def T(self) -> int:  # type: ignore[override]
        return self.data.shape[0]

    def prior_mean_var(self):
        return 0.0, self.prior_var

    def trans_mean_var(self, z_prev):
        return self.a * np.asarray(z_prev, dtype=float), self.trans_var

    def log_obs(self, t_idx: int, z_t):
        resid = self.data[t_idx] - self.c * np.asarray(z_t, dtype=float)
        return self._obs_const - self._obs_half_prec * resid * resid

    def theta_unconstrained(self) -> np.ndarray:
        return np.array([self.a, np.log(self.trans_var), np.log(self.obs_var)])

    def with_theta(self, theta) -> "LinearGaussianSsm":
        theta = np.asarray(theta, dtype=float)
        return replace(self, a=float(theta[0]), trans_var=float(np.exp(theta[1])),
                       obs_var=float(np.exp(theta[2])))

    def grad_theta_log_joint(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        if states.shape[0] != self.T:
            raise ValueError("trajectory length mismatch")
        q, r = self.trans_var, self.obs_var
        g_a = 0.0
        g_lq = 0.0
        if self.T > 1:
            resid = states[1:] - self.a * states[:-1]
            g_a = float(np.sum(resid * states[:-1]) / q)
            g_lq = float(np.sum(-0.5 + resid**2 / (2.0 * q)))
        obs_resid = self.data - self.c * states
        g_lr = float(np.sum(-0.5 + obs_resid**2 / (2.0 * r)))
        return np.array([g_a, g_lq, g_lr])

    # -- Kalman oracle ----------------------------------------------------

    def kalman_filter(self):
        """Predictive and filtered moments per step plus the log likelihood."""
        T = self.T
        pred_m = np.empty(T)
        pred_v = np.empty(T)
        filt_m = np.empty(T)
        filt_v = np.empty(T)
        loglik = 0.0
        m, v = 0.0, self.prior_var
        for t in range(T):
            pred_m[t], pred_v[t] = m, v
            s = self.c**2 * v + self.obs_var
            innov = self.data[t] - self.c * m
            loglik += -0.5 * (_LOG_2PI + np.log(s) + innov**2 / s)
            gain = v * self.c / s
            filt_m[t] = m + gain * innov
            filt_v[t] = (1.0 - gain * self.c) * v
            m = self.a * filt_m[t]
            v = self.a**2 * filt_v[t] + self.trans_var
        return pred_m, pred_v, filt_m, filt_v, float(loglik)

    def kalman_log_likelihood(self) -> float:
        return self.kalman_filter()[4]

    def kalman_smoother_moments(self):
        """Marginal posterior mean and variance of each state."""
        pred_m, pred_v, filt_m, filt_v, _ = self.kalman_filter()
        T = self.T
        sm_m = np.empty(T)
        sm_v = np.empty(T)
        sm_m[-1], sm_v[-1] = filt_m[-1], filt_v[-1]
        for t in range(T - 2, -1, -1):
            gain = filt_v[t] * self.a / pred_v[t + 1]
            sm_m[t] = filt_m[t] + gain * (sm_m[t + 1] - pred_m[t + 1])
            sm_v[t] = filt_v[t] + gain**2 * (sm_v[t + 1] - pred_v[t + 1])
        return sm_m, sm_v

    def posterior_sample(self, rng, size: int = 1) -> np.ndarray:
        """(size, T) exact draws from p(z_{1:T} | x_{1:T}) by backward sampling."""
        gen = as_generator(rng)
        pred_m, pred_v, filt_m, filt_v, _ = self.kalman_filter()
        T = self.T
        out = np.empty((size, T))
        out[:, -1] = filt_m[-1] + np.sqrt(filt_v[-1]) * gen.standard_normal(size)
        for t in range(T - 2, -1, -1):
            gain = filt_v[t] * self.a / pred_v[t + 1]
            cond_m = filt_m[t] + gain * (out[:, t + 1] - pred_m[t + 1])
            cond_v = filt_v[t] - gain**2 * pred_v[t + 1]
            out[:, t] = cond_m + np.sqrt(max(cond_v, 0.0)) * gen.standard_normal(size)
        return out


def lgssm_spec(T: int, trans_coef: float, trans_var: float, obs_coef: float,
               obs_var: float, prior_var: float, data=None) -> LinearGaussianSsm:
    """Build a linear Gaussian model; data defaults to zeros of length T."""
    if data is None:
        data = np.zeros(T)
    data = np.atleast_1d(np.asarray(data, dtype=float))
    if data.shape[0] != T:
        raise ValueError("data length must equal T")
    return LinearGaussianSsm(a=trans_coef, trans_var=trans_var, c=obs_coef,
                             obs_var=obs_var, prior_var=prior_var, data=data)


def lgssm_simulate(model: LinearGaussianSsm, rng) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral draw of (z_{1:T}, x_{1:T}) from a linear Gaussian model."""
    gen = as_generator(rng)
    T = model.T
    z = np.empty(T)
    z[0] = np.sqrt(model.prior_var) * gen.standard_normal()
    for t in range(1, T):
        z[t] = model.a * z[t - 1] + np.sqrt(model.trans_var) * gen.standard_normal()
    x = model.c * z + np.sqrt(model.obs_var) * gen.standard_normal(T)
    return z, x


@dataclass(frozen=True)
class SvParams:
    """Stochastic volatility parameters (sigma2, phi, mu, beta) and their images.

    Unconstrained coordinates are (log sigma2, atanh phi, mu, log beta);
    the two maps are exact inverses.
    """

    sigma2: float
    phi: float
    mu: float
    beta: float

    def __post_init__(self):
        if self.sigma2 <= 0.0 or self.beta <= 0.0:
            raise ValueError("sigma2 and beta must be positive")
        if not -1.0 < self.phi < 1.0:
            raise ValueError("phi must lie in (-1, 1)")

    def to_unconstrained(self) -> np.ndarray:
        return np.array([np.log(self.sigma2), np.arctanh(self.phi), self.mu,
                         np.log(self.beta)])

    @classmethod
    def from_unconstrained(cls, u) -> "SvParams":
        u = np.asarray(u, dtype=float)
        return cls(sigma2=float(np.exp(u[0])), phi=float(np.tanh(u[1])),
                   mu=float(u[2]), beta=float(np.exp(u[3])))


@dataclass(frozen=True)
class StochasticVolatilitySsm(GaussianSsm):
    """Latent log-volatility AR(1) observed through scale: x_t ~ N(0, beta exp(z_t)).

    Prior: z_1 ~ N(0, sigma2/(1-phi^2)); transition mean reverts to mu at
    rate phi with innovation variance sigma2.
    """

    params: SvParams
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", np.atleast_1d(np.asarray(self.data, dtype=float)))
        object.__setattr__(self, "_obs_const",
                           -0.5 * (_LOG_2PI + np.log(self.params.beta)))
        object.__setattr__(self, "_half_x2_over_beta", 0.5 * self.data**2 / self.params.beta)

    @property
    def T(self) -> int:  # type: ignore[override]
        return self.data.shape[0]

    def prior_mean_var(self):
        p = self.params
        return 0.0, p.sigma2 / (1.0 - p.phi**2)

    def trans_mean_var(self, z_prev):
        p = self.params
        return p.mu + p.phi * (np.asarray(z_prev, dtype=float) - p.mu), p.sigma2

    def log_obs(self, t_idx: int, z_t):
        z_t = np.asarray(z_t, dtype=float)
        out = self._obs_const - 0.5 * z_t - self._half_x2_over_beta[t_idx] * np.exp(-z_t)
        return float(out) if out.ndim == 0 else out

    def theta_unconstrained(self) -> np.ndarray:
        return self.params.to_unconstrained()

    def with_theta(self, theta) -> "StochasticVolatilitySsm":
        return replace(self, params=SvParams.from_unconstrained(theta))

    def grad_theta_log_joint(self, states) -> np.ndarray:
        """Analytic gradient in (log sigma2, atanh phi, mu, log beta)."""
        states = np.asarray(states, dtype=float)
        if states.shape[0] != self.T:
            raise ValueError("trajectory length mismatch")
        p = self.params
        s, phi, mu = p.sigma2, p.phi, p.mu
        g = np.zeros(4)

        v0 = s / (1.0 - phi**2)
        dv0 = -0.5 / v0 + states[0] ** 2 / (2.0 * v0**2)
        g[0] += dv0 * v0
        g[1] += dv0 * v0 * 2.0 * phi

        if self.T > 1:
            prev = states[:-1]
            resid = states[1:] - (mu + phi * (prev - mu))
            g[0] += np.sum(-0.5 + resid**2 / (2.0 * s))
            g[1] += np.sum(resid * (prev - mu)) * (1.0 - phi**2) / s
            g[2] += np.sum(resid) * (1.0 - phi) / s

        obs_var = p.beta * np.exp(states)
        g[3] += np.sum(-0.5 + self.data**2 / (2.0 * obs_var))
        return g


def sv_spec(params: SvParams, data) -> StochasticVolatilitySsm:
    return StochasticVolatilitySsm(params=params, data=data)


def sv_simulate(params: SvParams, T: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral draw of (z_{1:T}, x_{1:T}) from the volatility model."""
    gen = as_generator(rng)
    z = np.empty(T)
    z[0] = np.sqrt(params.sigma2 / (1.0 - params.phi**2)) * gen.standard_normal()
    for t in range(1, T):
        mean = params.mu + params.phi * (z[t - 1] - params.mu)
        z[t] = mean + np.sqrt(params.sigma2) * gen.standard_normal()
    x = np.sqrt(params.beta * np.exp(z)) * gen.standard_normal(T)
    return z, x
