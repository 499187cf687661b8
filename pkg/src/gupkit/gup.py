"""Depth inference as a distribution: projection, bias composition, confidence.

The 3D height is predicted as a Laplace distribution ``(mu_h, sigma_h)``.
Projecting through ``depth = f * h3d / h2d`` is affine in ``h3d``, so the
projected depth is Laplace with both moments scaled by ``f / h2d``.  A learned
bias distribution ``(mu_b, sigma_b)`` is added, assumed independent, giving::

    mu_d    = f * mu_h / h2d + mu_b
    sigma_d = sqrt((f * sigma_h / h2d)**2 + sigma_b**2)

The depth is trained with the Laplace loss and its spread is mapped to a
confidence ``exp(-sigma_d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import CameraModel
from .laplace import LaplaceDist, affine, laplace_nll, laplace_nll_grad, sum_independent


@dataclass(frozen=True)
class GupInputs:
    h3d_dist: LaplaceDist
    h2d_px: float
    bias_dist: LaplaceDist
    cam: CameraModel

    def __post_init__(self) -> None:
        if not self.h2d_px > 0:
            raise ValueError(f"h2d_px must be positive, got {self.h2d_px}")


@dataclass(frozen=True)
class DepthPrediction:
    depth_dist: LaplaceDist
    projected_dist: LaplaceDist
    confidence: float


class DepthLossGrad(NamedTuple):
    """Gradient of the depth loss w.r.t. the five free inputs."""

    mu_h: float
    log_sigma_h: float
    mu_b: float
    log_sigma_b: float
    h2d: float


def project_distribution(inp: GupInputs) -> LaplaceDist:
    if not inp.h2d_px > 0:
        raise ValueError(f"h2d must be positive, got {inp.h2d_px}")
    return affine(inp.h3d_dist, inp.cam.focal_length_px / inp.h2d_px, 0.0)


def compose_depth(projected: LaplaceDist, bias: LaplaceDist) -> LaplaceDist:
    return sum_independent(projected, bias)


def depth_loss(final: LaplaceDist, d_gt: float) -> float:
    return float(laplace_nll(final.mu, final.sigma, d_gt))


def predict(inp: GupInputs) -> DepthPrediction:
    projected = project_distribution(inp)
    final = compose_depth(projected, inp.bias_dist)
    return DepthPrediction(final, projected, uncertainty_confidence(final.sigma))


def depth_forward(f, mu_h, log_sigma_h, mu_b, log_sigma_b, h2d):
    """Vectorized projection + composition.

    Returns ``(mu_d, sigma_d, mu_p, sigma_p, sigma_b)`` as arrays.
    """
    gain = f / h2d
    mu_p = gain * mu_h
    sigma_p = gain * np.exp(log_sigma_h)
    sigma_b = np.exp(log_sigma_b)
    return mu_p + mu_b, np.hypot(sigma_p, sigma_b), mu_p, sigma_p, sigma_b


def depth_loss_and_grad(f, mu_h, log_sigma_h, mu_b, log_sigma_b, h2d, d_gt):
    """Vectorized depth loss and its gradient w.r.t. the five inputs.

    Returns ``(loss, DepthLossGrad)`` with array-valued fields.
    """
    mu_d, sigma_d, mu_p, sigma_p, sigma_b = depth_forward(f, mu_h, log_sigma_h, mu_b, log_sigma_b, h2d)
    loss = laplace_nll(mu_d, sigma_d, d_gt)
    g_mu, g_sigma = laplace_nll_grad(mu_d, sigma_d, d_gt)
    # d sigma_d / d sigma_p = sigma_p / sigma_d; d sigma_p / d log sigma_h = sigma_p
    g_sigma_p = g_sigma * sigma_p / sigma_d
    grad = DepthLossGrad(
        mu_h=g_mu * f / h2d,
        log_sigma_h=g_sigma_p * sigma_p,
        mu_b=g_mu,
        log_sigma_b=g_sigma * sigma_b * sigma_b / sigma_d,
        h2d=-(g_mu * mu_p + g_sigma_p * sigma_p) / h2d,
    )
    return loss, grad


def depth_loss_grad(inp: GupInputs, d_gt: float) -> DepthLossGrad:
    """Chain-rule gradient of the depth loss through projection and composition."""
    _, g = depth_loss_and_grad(
        inp.cam.focal_length_px,
        inp.h3d_dist.mu,
        math.log(inp.h3d_dist.sigma),
        inp.bias_dist.mu,
        math.log(inp.bias_dist.sigma),
        inp.h2d_px,
        d_gt,
    )
    return DepthLossGrad(*(float(v) for v in g))


def uncertainty_confidence(sigma_d):
    """Map depth spread to a confidence in (0, 1) via ``exp(-sigma_d)``."""
    if np.any(~(np.asarray(sigma_d) > 0)):
        raise ValueError(f"sigma_d must be positive, got {sigma_d}")
    out = np.exp(-np.asarray(sigma_d, dtype=float))
    return float(out) if out.ndim == 0 else out


def fuse_scores(p2d, p_depth):
    """Final 3D score: 2D detection score times depth confidence."""
    p2d_a = np.asarray(p2d, dtype=float)
    pd_a = np.asarray(p_depth, dtype=float)
    if np.any((p2d_a < 0) | (p2d_a > 1) | np.isnan(p2d_a)):
        raise ValueError(f"p2d must lie in [0, 1], got {p2d}")
    if np.any((pd_a <= 0) | (pd_a > 1) | np.isnan(pd_a)):
        raise ValueError(f"p_depth must lie in (0, 1], got {p_depth}")
    out = p2d_a * pd_a
    return float(out) if out.ndim == 0 else out
