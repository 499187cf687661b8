"""Laplace distributions parameterized by their standard deviation.

A Laplace variable ``La(mu, lam)`` has density
``exp(-|x - mu| / lam) / (2 lam)`` and standard deviation
``sigma = sqrt(2) * lam``.  ``sigma`` is the stored field; ``lam`` is derived.

The regression loss used for every uncertain quantity is the Laplace
negative log-likelihood written in terms of ``sigma`` (constant dropped)::

    L(mu, sigma; y) = sqrt(2) / sigma * |mu - y| + log(sigma)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator so streams are reproducible across platforms."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class LaplaceDist:
    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValueError(f"non-finite Laplace parameters ({self.mu}, {self.sigma})")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def from_scale(cls, mu: float, lam: float) -> "LaplaceDist":
        return cls(mu, SQRT2 * lam)

    @property
    def scale(self) -> float:
        """The Laplace scale ``lam = sigma / sqrt(2)``."""
        return self.sigma / SQRT2


def pdf(d: LaplaceDist, x):
    lam = d.scale
    return np.exp(-np.abs(np.asarray(x, dtype=float) - d.mu) / lam) / (2.0 * lam)


def cdf(d: LaplaceDist, x):
    z = (np.asarray(x, dtype=float) - d.mu) / d.scale
    return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))


def interval_halfwidth(d: LaplaceDist, coverage: float) -> float:
    """Half-width ``q`` of the central interval with ``P(|X - mu| <= q) == coverage``."""
    if not 0.0 < coverage < 1.0:
        raise ValueError(f"coverage must lie in (0, 1), got {coverage}")
    return d.scale * math.log(1.0 / (1.0 - coverage))


def sample(d: LaplaceDist, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. values by inverting the CDF."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    u = rng.random(n) - 0.5
    # keep 1 - 2|u| strictly positive; u == -0.5 has probability 2**-53
    a = np.minimum(np.abs(u), 0.5 - 2.0**-54)
    return d.mu - d.scale * np.sign(u) * np.log1p(-2.0 * a)


def affine(d: LaplaceDist, a: float, b: float) -> LaplaceDist:
    """Distribution of ``a * X + b`` for ``X ~ d``."""
    if a == 0:
        raise ValueError("affine map with a == 0 collapses the distribution to a point")
    return LaplaceDist(a * d.mu + b, abs(a) * d.sigma)


def sum_independent(p: LaplaceDist, b: LaplaceDist) -> LaplaceDist:
    """Moment-matched Laplace approximation of ``P + B`` for independent terms.

    Mean and standard deviation are exact; the Laplace shape of the sum is
    an approximation.
    """
    return LaplaceDist(p.mu + b.mu, math.hypot(p.sigma, b.sigma))


def _check_sigma(sigma) -> None:
    if np.any(~(np.asarray(sigma) > 0)):
        raise ValueError(f"sigma must be positive, got {sigma}")


def laplace_nll(mu, sigma, target):
    """Laplace regression loss ``sqrt(2)/sigma * |mu - target| + log(sigma)``.

    Works elementwise on arrays.
    """
    _check_sigma(sigma)
    return SQRT2 / sigma * np.abs(mu - target) + np.log(sigma)


def laplace_nll_grad(mu, sigma, target):
    """Return ``(dL/dmu, dL/dsigma)``; the subgradient at ``mu == target`` is 0."""
    _check_sigma(sigma)
    r = mu - target
    return SQRT2 / sigma * np.sign(r), 1.0 / sigma - SQRT2 * np.abs(r) / sigma**2
