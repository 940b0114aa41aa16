"""Static target distributions with exact oracles where they exist.

Targets expose an unnormalized log joint log p(z, x); posterior
normalizers are never required by the inference code.  The conjugate
Gaussian target additionally exposes its exact posterior, which several
invariance checks use as ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from ..families import DiagGaussianParams
from ..numkit import normal_log_pdf, skew_normal_log_pdf, std_normal_log_cdf


class StaticTarget:
    """Unnormalized target over a fixed-dimension latent variable."""

    dim: int = 1

    def log_joint(self, z) -> float:
        raise NotImplementedError

    def log_joint_batch(self, Z) -> np.ndarray:
        """Log joint for each row of Z; subclasses override with vector code."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return np.array([self.log_joint(z) for z in Z])


@dataclass(frozen=True)
class SkewNormalTarget(StaticTarget):
    """Scalar skew normal with location xi, scale omega, shape alpha."""

    xi: float = 0.5
    omega: float = 2.0
    alpha: float = 5.0
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        if self.omega <= 0.0:
            raise ValueError("omega must be positive")
        object.__setattr__(self, "_log_norm",
                           math.log(2.0) - math.log(self.omega) - 0.5 * math.log(2 * math.pi))

    def log_joint(self, z) -> float:
        z = np.asarray(z, dtype=float).reshape(())
        return float(skew_normal_log_pdf(z, self.xi, self.omega, self.alpha))

    def log_joint_batch(self, Z) -> np.ndarray:
        u = (np.atleast_2d(np.asarray(Z, dtype=float))[:, 0] - self.xi) / self.omega
        return self._log_norm - 0.5 * u * u + log_ndtr(self.alpha * u)

    def moment_matched(self) -> tuple[float, float]:
        """(mean, sd) of the closest Gaussian under moment matching.

        mean = xi + omega*delta*sqrt(2/pi), var = omega^2 (1 - 2 delta^2/pi)
        with delta = alpha/sqrt(1+alpha^2).
        """
        delta = self.alpha / np.sqrt(1.0 + self.alpha**2)
        mean = self.xi + self.omega * delta * np.sqrt(2.0 / np.pi)
        var = self.omega**2 * (1.0 - 2.0 * delta**2 / np.pi)
        return float(mean), float(np.sqrt(var))


@dataclass(frozen=True)
class ConjugateGaussianTarget(StaticTarget):
    """Gaussian mean model: z ~ N(0, prior_var), x_i ~ N(z, noise_var).

    The posterior is Gaussian in closed form, making this the reference
    target for kernel-invariance checks.  The likelihood factorizes over
    data points, which the minibatch gradient estimator relies on.
    """

    prior_var: float
    noise_var: float
    data: np.ndarray
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        if self.prior_var <= 0.0 or self.noise_var <= 0.0:
            raise ValueError("variances must be positive")
        data = np.atleast_1d(np.asarray(self.data, dtype=float))
        object.__setattr__(self, "data", data)
        # The log joint is quadratic in z; cache its coefficients.
        n, v0, v = data.shape[0], self.prior_var, self.noise_var
        const = (-0.5 * math.log(2 * math.pi * v0)
                 - 0.5 * n * math.log(2 * math.pi * v)
                 - float(np.sum(data**2)) / (2.0 * v))
        object.__setattr__(self, "_quad_a", const)
        object.__setattr__(self, "_quad_b", float(np.sum(data)) / v)
        object.__setattr__(self, "_quad_c", -0.5 * (1.0 / v0 + n / v))

    @property
    def n_points(self) -> int:
        return self.data.shape[0]

    def log_prior(self, z):
        z = np.asarray(z, dtype=float)
        return normal_log_pdf(z[..., 0], 0.0, np.sqrt(self.prior_var))

    def log_lik_subset(self, z, idx) -> np.ndarray:
        """Sum of per-point log likelihoods over ``idx`` for each row of z."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        x = self.data[np.asarray(idx, dtype=int)]
        sd = np.sqrt(self.noise_var)
        return np.sum(normal_log_pdf(x[None, :], z[:, :1], sd), axis=1)

    def log_joint(self, z) -> float:
        return float(self.log_joint_batch(np.atleast_2d(z))[0])

    def log_joint_batch(self, Z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(Z, dtype=float))[:, 0]
        return self._quad_a + self._quad_b * z + self._quad_c * z * z

    def posterior_mean_var(self) -> tuple[float, float]:
        """Exact posterior moments from the conjugate update."""
        precision = 1.0 / self.prior_var + self.n_points / self.noise_var
        mean = (np.sum(self.data) / self.noise_var) / precision
        return float(mean), float(1.0 / precision)

    def posterior_params(self) -> DiagGaussianParams:
        m, v = self.posterior_mean_var()
        return DiagGaussianParams(mu=[m], log_sigma=[0.5 * np.log(v)])


def skew_normal_target(xi: float, omega: float, alpha: float) -> SkewNormalTarget:
    return SkewNormalTarget(xi=xi, omega=omega, alpha=alpha)


def conjugate_gaussian_target(prior_var: float, noise_var: float, data) -> ConjugateGaussianTarget:
    return ConjugateGaussianTarget(prior_var=prior_var, noise_var=noise_var, data=data)


@dataclass(frozen=True)
class ProbitData:
    """Design matrix with intercept column appended and binary labels."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int64))
        if X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y row counts differ")
        if np.any(np.isnan(X)):
            raise ValueError("features contain NaN")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def probit_log_joint(data: ProbitData, z) -> float | np.ndarray:
    """Standard-normal prior plus probit likelihood, stable in both tails.

    Uses log Phi(a) for y = 1 and log Phi(-a) for y = 0, so extreme
    linear predictors lose no precision.  Accepts a (n, d) batch of z
    rows and returns a vector.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.shape[1] != data.d:
        raise ValueError(f"z has dimension {Z.shape[1]}, expected {data.d}")
    prior = np.sum(normal_log_pdf(Z, 0.0, 1.0), axis=1)
    A = Z @ data.X.T
    signs = np.where(data.y == 1, 1.0, -1.0)
    lik = np.sum(std_normal_log_cdf(A * signs), axis=1)
    out = prior + lik
    return float(out[0]) if single else out


@dataclass(frozen=True)
class ProbitTarget(StaticTarget):
    """Bayesian probit regression posterior as a static target."""

    data: ProbitData

    @property
    def dim(self) -> int:  # type: ignore[override]
        return self.data.d

    def log_joint(self, z) -> float:
        return probit_log_joint(self.data, np.asarray(z, dtype=float).ravel())

    def log_joint_batch(self, Z) -> np.ndarray:
        return probit_log_joint(self.data, np.atleast_2d(Z))


def probit_predict(q: DiagGaussianParams, x_new) -> float | np.ndarray:
    """P(y = 1 | x) under the Gaussian approximation, in closed form.

    The Gaussian integral of the probit link gives
    Phi(x'mu / sqrt(1 + sum_d x_d^2 sigma_d^2)); rows of a matrix input
    are handled at once.
    """
    x = np.asarray(x_new, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != q.dim:
        raise ValueError(f"x has dimension {X.shape[1]}, expected {q.dim}")
    m = X @ q.mu
    v = X**2 @ q.sigma**2
    p = np.exp(std_normal_log_cdf(m / np.sqrt(1.0 + v)))
    return float(p[0]) if single else p
