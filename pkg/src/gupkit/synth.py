"""Seeded synthetic monocular scenes standing in for a real driving dataset.

Every object draws its randomness from its own generator keyed on
``(seed, index)``, so a scene of ``n`` objects is a prefix of any larger scene
built from the same seed.  Features are a fixed nonlinear embedding of the
latent (3D height, depth) pair plus Gaussian noise.  The six non-depth
targets are smooth pseudo-targets of the same latents; they only exist to give
the hierarchical scheduler realistic loss curves to watch.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .geometry import CameraModel, project_height
from .htl import TASKS, TaskId
from .laplace import make_rng

MIN_H2D_PX = 0.5
_P2D_FLOOR = 0.3
_EMBED_SEED = 20210817
_N_BASIS = 8


@dataclass(frozen=True)
class SceneConfig:
    n_objects: int = 7000
    focal_length_px: float = 707.0
    depth_range_m: Tuple[float, float] = (5.0, 80.0)
    h3d_mean_m: float = 1.53
    h3d_std_m: float = 0.13
    h2d_noise_px: float = 0.5
    feature_dim: int = 8
    feature_noise: float = 0.05
    label_noise_m: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "depth_range_m", tuple(float(v) for v in self.depth_range_m))
        lo, hi = self.depth_range_m
        problems = []
        if self.n_objects < 0:
            problems.append(f"n_objects must be >= 0, got {self.n_objects}")
        if not self.focal_length_px > 0:
            problems.append(f"focal_length_px must be positive, got {self.focal_length_px}")
        if not 0 < lo < hi:
            problems.append(f"depth_range_m must satisfy 0 < min < max, got {self.depth_range_m}")
        if not (self.h3d_mean_m > 0 and self.h3d_std_m > 0):
            problems.append("h3d_mean_m and h3d_std_m must be positive")
        if self.h2d_noise_px < 0 or self.label_noise_m < 0 or self.feature_noise < 0:
            problems.append("noise levels must be nonnegative")
        if self.feature_dim < 1:
            problems.append(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.seed < 0:
            problems.append(f"seed must be nonnegative, got {self.seed}")
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depth_range_m"] = list(self.depth_range_m)
        return d


PRESETS: Dict[str, dict] = {
    "default": {},
    # noisier 2D heights amplify early depth gradients
    "high_noise": {"h2d_noise_px": 2.0},
}


def preset(name: str, **overrides) -> SceneConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown scene preset {name!r}; choose from {sorted(PRESETS)}")
    return SceneConfig(**{**PRESETS[name], **overrides})


@dataclass(frozen=True)
class SyntheticObject:
    idx: int
    h3d_gt: float
    depth_gt: float
    h2d_true: float
    h2d_obs: float
    p2d: float
    features: Tuple[float, ...]
    targets: Dict[TaskId, float] = field(hash=False)


def _embedding(feature_dim: int) -> np.ndarray:
    """Fixed well-conditioned mixing matrix from basis functions to features."""
    rng = make_rng(_EMBED_SEED)
    q, _ = np.linalg.qr(rng.standard_normal((max(feature_dim, _N_BASIS), _N_BASIS)))
    return q[:feature_dim] * math.sqrt(_N_BASIS / max(feature_dim, 1))


def _basis(a: float, b: float) -> np.ndarray:
    return np.array(
        [
            a,
            b,
            a * b,
            b * b - 1.0 / 3.0,
            math.sin(math.pi * b),
            math.tanh(a),
            math.cos(math.pi * a / 3.0),
            1.0 / (1.0 + math.exp(-3.0 * b)) - 0.5,
        ]
    )


def detection_score(depth: float, depth_max: float) -> float:
    """Synthetic 2D score: ``exp(-depth / depth_max)`` rescaled onto (0.3, 1]."""
    raw = math.exp(-depth / depth_max)
    lo = math.exp(-1.0)
    return _P2D_FLOOR + (1.0 - _P2D_FLOOR) * (raw - lo) / (1.0 - lo)


def _object(cfg: SceneConfig, idx: int, embed: np.ndarray) -> SyntheticObject:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, idx])))
    lo, hi = cfg.depth_range_m
    depth = float(rng.uniform(lo, hi))
    while True:
        h3d = float(cfg.h3d_mean_m + cfg.h3d_std_m * rng.standard_normal())
        if 0.5 * cfg.h3d_mean_m < h3d < 1.5 * cfg.h3d_mean_m:
            break
    cam = CameraModel(cfg.focal_length_px)
    h2d_true = project_height(cam, h3d, depth)
    h2d_obs = max(h2d_true + cfg.h2d_noise_px * float(rng.standard_normal()), MIN_H2D_PX)
    a = (h3d - cfg.h3d_mean_m) / cfg.h3d_std_m
    b = 2.0 * (depth - lo) / (hi - lo) - 1.0
    feats = embed @ _basis(a, b) + cfg.feature_noise * rng.standard_normal(cfg.feature_dim)
    label_noise = cfg.label_noise_m * float(rng.standard_normal())
    p2d = detection_score(depth, hi)
    targets = {
        TaskId.HEATMAP: p2d,
        TaskId.OFFSET2D: 0.5 * math.sin(math.pi * b) + 0.1 * a,
        TaskId.SIZE2D: h2d_true / 100.0,
        TaskId.ANGLE: 0.5 * math.cos(math.pi * a / 3.0) + 0.3 * b,
        TaskId.OFFSET3D: 0.2 * a * b + 0.1 * b * b,
        TaskId.SIZE3D: h3d + label_noise,
        TaskId.DEPTH: depth,
    }
    return SyntheticObject(idx, h3d, depth, h2d_true, h2d_obs, p2d, tuple(float(v) for v in feats), targets)


def generate(cfg: SceneConfig) -> List[SyntheticObject]:
    embed = _embedding(cfg.feature_dim)
    return [_object(cfg, i, embed) for i in range(cfg.n_objects)]


def split(
    objects: Sequence[SyntheticObject], train_fraction: float, seed: int
) -> Tuple[List[SyntheticObject], List[SyntheticObject]]:
    """Deterministic shuffle-split into disjoint (train, holdout) lists."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if not objects:
        raise ValueError("cannot split an empty object list")
    order = make_rng(seed).permutation(len(objects))
    n_train = int(round(train_fraction * len(objects)))
    return [objects[i] for i in order[:n_train]], [objects[i] for i in order[n_train:]]


@dataclass(frozen=True)
class SceneArrays:
    """Column view of a list of objects, as consumed by the trainer."""

    h3d_gt: np.ndarray
    depth_gt: np.ndarray
    h2d_obs: np.ndarray
    p2d: np.ndarray
    features: np.ndarray
    targets: Dict[TaskId, np.ndarray]

    def __len__(self) -> int:
        return len(self.depth_gt)

    def take(self, idx: np.ndarray) -> "SceneArrays":
        return SceneArrays(
            self.h3d_gt[idx],
            self.depth_gt[idx],
            self.h2d_obs[idx],
            self.p2d[idx],
            self.features[idx],
            {k: v[idx] for k, v in self.targets.items()},
        )


def to_arrays(objects: Sequence[SyntheticObject], feature_dim: int | None = None) -> SceneArrays:
    if objects:
        feature_dim = len(objects[0].features)
    elif feature_dim is None:
        raise ValueError("feature_dim is required for an empty object list")
    col = lambda name: np.array([getattr(o, name) for o in objects], dtype=float)  # noqa: E731
    return SceneArrays(
        col("h3d_gt"),
        col("depth_gt"),
        col("h2d_obs"),
        col("p2d"),
        np.array([o.features for o in objects], dtype=float).reshape(len(objects), feature_dim),
        {t: np.array([o.targets[t] for o in objects], dtype=float) for t in TASKS},
    )


def csv_header(feature_dim: int) -> List[str]:
    return (
        ["idx", "h3d_gt", "depth_gt", "h2d_true", "h2d_obs", "p2d"]
        + [f"f{k}" for k in range(feature_dim)]
        + [f"t_{t.value}" for t in TASKS]
    )


def write_dataset(path: Path, objects: Sequence[SyntheticObject], feature_dim: int) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(feature_dim))
        for o in objects:
            w.writerow(
                [o.idx]
                + [repr(v) for v in (o.h3d_gt, o.depth_gt, o.h2d_true, o.h2d_obs, o.p2d)]
                + [repr(v) for v in o.features]
                + [repr(o.targets[t]) for t in TASKS]
            )


def read_dataset(path: Path) -> Tuple[List[SyntheticObject], int]:
    """Load a dataset CSV; returns the objects and the feature dimension."""
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        feature_dim = sum(1 for h in header if h.startswith("f") and h[1:].isdigit())
        if header != csv_header(feature_dim):
            raise ValueError(f"{path}: unexpected dataset header")
        objects = []
        for row in r:
            vals = [float(v) for v in row[1:]]
            feats = tuple(vals[5 : 5 + feature_dim])
            targets = dict(zip(TASKS, vals[5 + feature_dim :]))
            objects.append(SyntheticObject(int(row[0]), *vals[:5], feats, targets))
    return objects, feature_dim
