"""Pinhole height/depth relations and error-amplification analysis.

Under a pinhole camera with focal length ``f`` (pixels) an object of 3D
height ``h3d`` (meters) at distance ``depth`` (meters) spans::

    h2d = f * h3d / depth        (pixels)

so depth can be recovered as ``depth = f * h3d / h2d``.  Any error in the
3D height is multiplied by the gain ``f / h2d`` on its way into the depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera reduced to its focal length in pixels."""

    focal_length_px: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.focal_length_px) and self.focal_length_px > 0):
            raise ValueError(
                f"focal_length_px must be positive and finite, got {self.focal_length_px}"
            )


@dataclass(frozen=True)
class ObjectGeometry:
    h3d_m: float
    depth_m: float
    h2d_px: float

    def __post_init__(self) -> None:
        for name in ("h3d_m", "depth_m", "h2d_px"):
            _require_positive(name, getattr(self, name))

    @classmethod
    def noise_free(cls, cam: CameraModel, h3d_m: float, depth_m: float) -> "ObjectGeometry":
        return cls(h3d_m, depth_m, project_height(cam, h3d_m, depth_m))


def _require_positive(name: str, value: float) -> None:
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")


def infer_depth(cam: CameraModel, h3d: float, h2d: float) -> float:
    """Depth in meters from 3D height (m) and projected 2D height (px)."""
    _require_positive("h3d", h3d)
    _require_positive("h2d", h2d)
    return cam.focal_length_px * h3d / h2d


def project_height(cam: CameraModel, h3d: float, depth: float) -> float:
    """Projected 2D height in pixels of an object ``h3d`` tall at ``depth``."""
    _require_positive("h3d", h3d)
    _require_positive("depth", depth)
    return cam.focal_length_px * h3d / depth


def depth_shift(cam: CameraModel, h2d: float, delta_h3d: float) -> float:
    """Exact depth change caused by perturbing the 3D height by ``delta_h3d``.

    The 2D height is held fixed, so the shift is ``f * delta_h3d / h2d``.
    For a noise-free observation this equals ``depth * delta_h3d / h3d``.
    """
    _require_positive("h2d", h2d)
    return cam.focal_length_px * delta_h3d / h2d


def amplification_gain(cam: CameraModel, h2d: float) -> float:
    """Meters of depth error per meter of 3D-height error, ``f / h2d``."""
    _require_positive("h2d", h2d)
    return cam.focal_length_px / h2d
