"""Seedable random streams and log-domain numerical primitives.

All weight handling in this package happens on the natural-log scale;
the helpers here are the only place where log weights are exponentiated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

_LOG_2PI = math.log(2.0 * math.pi)


class DegenerateWeightsError(RuntimeError):
    """Raised when every log weight is -inf (total proposal/target mismatch).

    ``step`` carries the 1-based time index for sequential kernels, or None
    for static ones.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    The same pair reproduces the identical draw sequence bit-for-bit;
    distinct stream_ids give statistically independent streams.  Each
    logical thread of execution should own its own stream.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise ValueError("seed and stream_id must fit in 64 unsigned bits")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def as_generator(rng: RngStream | np.random.Generator | int) -> np.random.Generator:
    """Accept a stream, a ready generator, or a bare seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return RngStream(int(rng)).generator()


def log_sum_exp(v) -> float:
    """log(sum(exp(v))), stable under uniform translation of v.

    Returns -inf iff every entry is -inf.  Empty input is an error.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = np.max(v)
    if not np.isfinite(m):
        if m == -np.inf:
            return -np.inf
        raise ValueError("log_sum_exp input contains +inf or NaN")
    return float(m + np.log(np.sum(np.exp(v - m))))


def normalize_log_weights(log_w) -> np.ndarray:
    """Probability vector proportional to exp(log_w).

    Raises DegenerateWeightsError when no entry is finite.
    """
    log_w = np.asarray(log_w, dtype=float)
    lse = log_sum_exp(log_w)
    if lse == -np.inf:
        raise DegenerateWeightsError("all log weights are -inf")
    w = np.exp(log_w - lse)
    return w / np.sum(w)


def categorical_sample(p, rng) -> int:
    """Draw an index j with probability p[j] from a single uniform.

    Uses a cumulative scan; a uniform landing exactly on a boundary
    resolves to the lower index.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p < 0.0):
        raise ValueError("categorical probabilities must be nonnegative")
    if abs(float(np.sum(p)) - 1.0) > 1e-9:
        raise ValueError("categorical probabilities must sum to 1")
    gen = as_generator(rng)
    u = gen.random()
    return int(np.searchsorted(np.cumsum(p), u, side="left"))


def categorical_sample_many(p, size: int, rng) -> np.ndarray:
    """``size`` iid draws from the categorical distribution p."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0.0):
        raise ValueError("categorical probabilities must be nonnegative")
    if abs(float(np.sum(p)) - 1.0) > 1e-9:
        raise ValueError("categorical probabilities must sum to 1")
    gen = as_generator(rng)
    u = gen.random(size)
    return np.searchsorted(np.cumsum(p), u, side="left").astype(np.int64)


def normal_log_pdf(z, mean, sd):
    """Gaussian log density; broadcasts over array arguments."""
    sd = np.asarray(sd, dtype=float)
    if np.any(sd <= 0.0):
        raise ValueError("sd must be positive")
    z = np.asarray(z, dtype=float)
    out = -0.5 * _LOG_2PI - np.log(sd) - 0.5 * ((z - mean) / sd) ** 2
    return float(out) if out.ndim == 0 else out


def std_normal_log_cdf(x):
    """log of the standard normal CDF, stable far into the left tail.

    Backed by the erfc-based ``scipy.special.log_ndtr``, which switches to
    an asymptotic expansion for large negative arguments; +-inf map to
    0 and -inf.
    """
    out = log_ndtr(np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


def skew_normal_log_pdf(z, xi, omega, alpha):
    """Log density of the skew normal with location xi, scale omega, shape alpha.

    log[2/omega * phi((z-xi)/omega) * Phi(alpha*(z-xi)/omega)]; alpha = 0
    recovers the plain Gaussian.
    """
    if omega <= 0.0:
        raise ValueError("omega must be positive")
    u = (np.asarray(z, dtype=float) - xi) / omega
    out = math.log(2.0) + normal_log_pdf(z, xi, omega) + std_normal_log_cdf(alpha * u)
    return float(out) if np.ndim(out) == 0 else out
