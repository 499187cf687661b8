"""Analytic-gradient multi-task trainer on synthetic scenes.

Eight disjoint heads read the object feature vector:

* five scalar pseudo-task heads (heatmap, 2D offset, 2D size, angle,
  3D offset) trained with squared error,
* the 3D-height head emitting ``(mu_h, log sigma_h)`` trained with the
  Laplace height loss,
* the depth-bias head emitting ``(mu_b, log sigma_b)``,
* an additive 2D-height correction in pixels.

The depth task runs the projection/composition pipeline on
``h2d_eff = max(h2d_obs + correction, 0.5)`` and feeds gradients back into
the height, bias and correction heads.  Each head is linear by default or
has one tanh hidden layer when ``hidden > 0``.

The loss for a batch is ``sum_i w_i * sum_n L_i[n]``; gradients are summed
over the batch, not averaged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .evaluate import depth_mae, spearman
from .gup import DepthPrediction, depth_forward, depth_loss_and_grad, uncertainty_confidence
from .htl import TASKS, HTLScheduler, ScheduleConfig, TaskId, TraceRow
from .laplace import LaplaceDist, laplace_nll, laplace_nll_grad, make_rng
from .synth import MIN_H2D_PX, SceneArrays, SyntheticObject, to_arrays

PSEUDO_TASKS = (TaskId.HEATMAP, TaskId.OFFSET2D, TaskId.SIZE2D, TaskId.ANGLE, TaskId.OFFSET3D)
HEADS: Dict[str, int] = {
    **{t.value: 1 for t in PSEUDO_TASKS},
    "h3d": 2,
    "bias": 2,
    "h2d_corr": 1,
}


class TrainingDiverged(RuntimeError):
    """Raised when losses, scales or parameters stop being finite during training."""

    def __init__(self, task: str, epoch: int, value: float):
        super().__init__(f"non-finite epoch-mean loss {value} for task {task} at epoch {epoch}")
        self.task = task
        self.epoch = epoch


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class ModelParams:
    """Named parameter arrays, e.g. ``h3d.W`` (D x 2) and ``h3d.b`` (2,).

    With a hidden layer each head has ``W1, b1, W2, b2`` instead of ``W, b``.
    """

    feature_dim: int
    hidden: int
    arrays: Dict[str, np.ndarray]

    @classmethod
    def init(cls, feature_dim: int, seed: int, hidden: int = 0) -> "ModelParams":
        rng = make_rng(seed)
        s_in = 1.0 / math.sqrt(feature_dim)
        arrays: Dict[str, np.ndarray] = {}
        for head, out in HEADS.items():
            if hidden:
                s_h = 1.0 / math.sqrt(hidden)
                arrays[f"{head}.W1"] = rng.uniform(-s_in, s_in, (feature_dim, hidden))
                arrays[f"{head}.b1"] = rng.uniform(-s_in, s_in, hidden)
                arrays[f"{head}.W2"] = rng.uniform(-s_h, s_h, (hidden, out))
                arrays[f"{head}.b2"] = rng.uniform(-s_h, s_h, out)
            else:
                arrays[f"{head}.W"] = rng.uniform(-s_in, s_in, (feature_dim, out))
                arrays[f"{head}.b"] = rng.uniform(-s_in, s_in, out)
        return cls(feature_dim, hidden, arrays)

    @classmethod
    def zeros(cls, feature_dim: int, hidden: int = 0) -> "ModelParams":
        p = cls.init(feature_dim, 0, hidden)
        return cls(feature_dim, hidden, {k: np.zeros_like(v) for k, v in p.arrays.items()})

    def copy(self) -> "ModelParams":
        return ModelParams(self.feature_dim, self.hidden, {k: v.copy() for k, v in self.arrays.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())


def _head_forward(p: ModelParams, head: str, X: np.ndarray):
    a = p.arrays
    if p.hidden:
        z = np.tanh(X @ a[f"{head}.W1"] + a[f"{head}.b1"])
        return z @ a[f"{head}.W2"] + a[f"{head}.b2"], z
    return X @ a[f"{head}.W"] + a[f"{head}.b"], None


def _head_backward(p: ModelParams, head: str, X: np.ndarray, cache, d_out: np.ndarray, grads) -> None:
    a = p.arrays
    if p.hidden:
        z = cache
        grads[f"{head}.W2"] = z.T @ d_out
        grads[f"{head}.b2"] = d_out.sum(axis=0)
        d_pre = (d_out @ a[f"{head}.W2"].T) * (1.0 - z * z)
        grads[f"{head}.W1"] = X.T @ d_pre
        grads[f"{head}.b1"] = d_pre.sum(axis=0)
    else:
        grads[f"{head}.W"] = X.T @ d_out
        grads[f"{head}.b"] = d_out.sum(axis=0)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


@dataclass
class Outputs:
    pseudo: Dict[TaskId, np.ndarray]
    mu_h: np.ndarray
    log_sigma_h: np.ndarray
    mu_b: np.ndarray
    log_sigma_b: np.ndarray
    correction: np.ndarray
    h2d_eff: np.ndarray
    mu_p: np.ndarray
    sigma_p: np.ndarray
    mu_d: np.ndarray
    sigma_d: np.ndarray
    confidence: np.ndarray
    caches: Dict[str, object] = field(repr=False, default_factory=dict)


def forward(params: ModelParams, data: SceneArrays, focal_length_px: float) -> Outputs:
    X = data.features
    if X.ndim != 2 or X.shape[1] != params.feature_dim:
        raise ValueError(
            f"feature dimension mismatch: data has {X.shape[-1]}, model expects {params.feature_dim}"
        )
    heads = {h: _head_forward(params, h, X) for h in HEADS}
    h3d_out, bias_out = heads["h3d"][0], heads["bias"][0]
    correction = heads["h2d_corr"][0][:, 0]
    h2d_eff = np.maximum(data.h2d_obs + correction, MIN_H2D_PX)
    mu_h, log_sigma_h = h3d_out[:, 0], h3d_out[:, 1]
    mu_b, log_sigma_b = bias_out[:, 0], bias_out[:, 1]
    mu_d, sigma_d, mu_p, sigma_p, _ = depth_forward(
        focal_length_px, mu_h, log_sigma_h, mu_b, log_sigma_b, h2d_eff
    )
    return Outputs(
        pseudo={t: heads[t.value][0][:, 0] for t in PSEUDO_TASKS},
        mu_h=mu_h,
        log_sigma_h=log_sigma_h,
        mu_b=mu_b,
        log_sigma_b=log_sigma_b,
        correction=correction,
        h2d_eff=h2d_eff,
        mu_p=mu_p,
        sigma_p=sigma_p,
        mu_d=mu_d,
        sigma_d=sigma_d,
        confidence=np.exp(-sigma_d),
        caches={h: c for h, (_, c) in heads.items()},
    )


def task_losses(out: Outputs, data: SceneArrays) -> Dict[TaskId, np.ndarray]:
    """Unweighted per-object losses for every task."""
    losses = {t: (out.pseudo[t] - data.targets[t]) ** 2 for t in PSEUDO_TASKS}
    losses[TaskId.SIZE3D] = laplace_nll(out.mu_h, np.exp(out.log_sigma_h), data.targets[TaskId.SIZE3D])
    losses[TaskId.DEPTH] = laplace_nll(out.mu_d, out.sigma_d, data.targets[TaskId.DEPTH])
    return losses


def total_loss(params: ModelParams, data: SceneArrays, focal_length_px: float, weights) -> float:
    losses = task_losses(forward(params, data, focal_length_px), data)
    return float(sum(weights[t] * losses[t].sum() for t in TASKS))


def backward(
    params: ModelParams, data: SceneArrays, focal_length_px: float, weights
) -> Tuple[Dict[str, np.ndarray], Dict[TaskId, np.ndarray], Outputs]:
    """Exact gradient of ``sum_i w_i * sum_n L_i[n]`` w.r.t. every parameter.

    Returns ``(grads, per-object task losses, forward outputs)``.
    """
    out = forward(params, data, focal_length_px)
    losses = task_losses(out, data)
    X = data.features
    grads: Dict[str, np.ndarray] = {}

    for t in PSEUDO_TASKS:
        d = weights[t] * 2.0 * (out.pseudo[t] - data.targets[t])
        _head_backward(params, t.value, X, out.caches[t.value], d[:, None], grads)

    sigma_h = np.exp(out.log_sigma_h)
    g_mu, g_sigma = laplace_nll_grad(out.mu_h, sigma_h, data.targets[TaskId.SIZE3D])
    w_h, w_d = weights[TaskId.SIZE3D], weights[TaskId.DEPTH]
    d_mu_h = w_h * g_mu
    d_ls_h = w_h * g_sigma * sigma_h

    _, g = depth_loss_and_grad(
        focal_length_px,
        out.mu_h,
        out.log_sigma_h,
        out.mu_b,
        out.log_sigma_b,
        out.h2d_eff,
        data.targets[TaskId.DEPTH],
    )
    d_mu_h = d_mu_h + w_d * g.mu_h
    d_ls_h = d_ls_h + w_d * g.log_sigma_h
    unclamped = (data.h2d_obs + out.correction) > MIN_H2D_PX
    d_corr = w_d * g.h2d * unclamped

    _head_backward(params, "h3d", X, out.caches["h3d"], np.stack([d_mu_h, d_ls_h], axis=1), grads)
    _head_backward(
        params, "bias", X, out.caches["bias"], np.stack([w_d * g.mu_b, w_d * g.log_sigma_b], axis=1), grads
    )
    _head_backward(params, "h2d_corr", X, out.caches["h2d_corr"], d_corr[:, None], grads)
    return grads, losses, out


def predict_object(
    params: ModelParams, obj: SyntheticObject, focal_length_px: float
) -> Tuple[Dict[TaskId, float], DepthPrediction]:
    """Single-object forward pass returning pseudo-task outputs and the depth prediction."""
    out = forward(params, to_arrays([obj]), focal_length_px)
    pseudo = {t: float(v[0]) for t, v in out.pseudo.items()}
    pred = DepthPrediction(
        depth_dist=LaplaceDist(float(out.mu_d[0]), float(out.sigma_d[0])),
        projected_dist=LaplaceDist(float(out.mu_p[0]), float(out.sigma_p[0])),
        confidence=uncertainty_confidence(float(out.sigma_d[0])),
    )
    return pseudo, pred


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    total_epochs: int = 60
    window: int = 5
    learning_rate: float = 1.25e-3
    lr_decay_epochs: Tuple[int, ...] = (39, 51)
    lr_decay_factor: float = 0.1
    warmup_epochs: int = 5
    batch_size: int = 16
    seed: int = 0
    scheduler: str = "htl"
    hidden: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs))
        problems = []
        if self.total_epochs < self.window or self.window < 1:
            problems.append(f"need total_epochs >= window >= 1, got {self.total_epochs}, {self.window}")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            problems.append(f"warmup_epochs must lie in [0, total_epochs), got {self.warmup_epochs}")
        if not self.learning_rate > 0:
            problems.append(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.scheduler not in ("htl", "constant"):
            problems.append(f"scheduler must be 'htl' or 'constant', got {self.scheduler!r}")
        if self.hidden < 0:
            problems.append(f"hidden must be >= 0, got {self.hidden}")
        if self.seed < 0:
            problems.append(f"seed must be nonnegative, got {self.seed}")
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def full_length(cls, **overrides) -> "TrainConfig":
        """The full-length schedule: 140 epochs, decays at 90 and 120."""
        return cls(**{"total_epochs": 140, "lr_decay_epochs": (90, 120), **overrides})

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        return d


def learning_rate(cfg: TrainConfig, t: int) -> float:
    """LR for epoch ``t``: linear warm-up from lr/W to lr, then step decays."""
    lr = cfg.learning_rate
    if t <= cfg.warmup_epochs:
        return lr * t / cfg.warmup_epochs
    for milestone in cfg.lr_decay_epochs:
        if t > milestone:
            lr *= cfg.lr_decay_factor
    return lr


@dataclass(frozen=True)
class EpochSummary:
    epoch: int
    lr: float
    holdout_mae: Optional[float]
    holdout_spearman: Optional[float]


@dataclass
class TrainTrace:
    rows: List[TraceRow]
    summaries: List[EpochSummary]
    weighted_terms: List[Dict[TaskId, float]]
    initial_holdout_mae: Optional[float] = None

    def weights(self, task: TaskId) -> List[float]:
        return [r.weight for r in self.rows if r.task == task]

    def column(self, task: TaskId, name: str) -> List[float]:
        return [getattr(r, name) for r in self.rows if r.task == task]


TRAIN_TRACE_HEADER = ("epoch", "task", "loss", "df", "ls", "alpha", "weight", "lr", "holdout_mae", "holdout_spearman")
SUMMARY_TASK = "summary"


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def write_trace(path: Path, trace: TrainTrace) -> None:
    by_epoch: Dict[int, List[TraceRow]] = {}
    for r in trace.rows:
        by_epoch.setdefault(r.epoch, []).append(r)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAIN_TRACE_HEADER)
        for s in trace.summaries:
            for r in by_epoch.get(s.epoch, []):
                w.writerow([r.epoch, r.task.value, _fmt(r.loss), _fmt(r.df), _fmt(r.ls), _fmt(r.alpha), _fmt(r.weight), "", "", ""])
            w.writerow([s.epoch, SUMMARY_TASK, "", "", "", "", "", _fmt(s.lr), _fmt(s.holdout_mae), _fmt(s.holdout_spearman)])


def read_trace(path: Path) -> List[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def holdout_metrics(params: ModelParams, holdout: SceneArrays, focal_length_px: float) -> Tuple[float, float]:
    out = forward(params, holdout, focal_length_px)
    err = np.abs(out.mu_d - holdout.depth_gt)
    return depth_mae(out.mu_d, holdout.depth_gt), spearman(out.sigma_d, err)


def train(
    cfg: TrainConfig,
    train_set: SceneArrays,
    focal_length_px: float,
    holdout: Optional[SceneArrays] = None,
    params: Optional[ModelParams] = None,
) -> Tuple[ModelParams, TrainTrace]:
    """Minibatch gradient descent under HTL or constant task weights.

    Deterministic given ``cfg.seed``: the same seed fixes initialization and
    the per-epoch shuffles.
    """
    n = len(train_set)
    if n == 0:
        raise ValueError("training set is empty")
    feature_dim = train_set.features.shape[1]
    if params is None:
        params = ModelParams.init(feature_dim, cfg.seed, cfg.hidden)
    else:
        params = params.copy()
    sched = HTLScheduler(
        ScheduleConfig(cfg.total_epochs, cfg.window), constant=(cfg.scheduler == "constant")
    )
    shuffle_rng = make_rng(cfg.seed + 1)
    trace = TrainTrace([], [], [])
    if holdout is not None:
        trace.initial_holdout_mae = holdout_metrics(params, holdout, focal_length_px)[0]

    weights = sched.weights(1)
    for t in range(1, cfg.total_epochs + 1):
        lr = learning_rate(cfg, t)
        order = shuffle_rng.permutation(n)
        sums = {task: 0.0 for task in TASKS}
        for start in range(0, n, cfg.batch_size):
            batch = train_set.take(order[start : start + cfg.batch_size])
            try:
                with np.errstate(over="ignore", under="ignore", invalid="ignore"):
                    grads, losses, _ = backward(params, batch, focal_length_px, weights)
            except ValueError as err:
                # a scale head ran off to exp() overflow/underflow
                raise TrainingDiverged("batch", t, float("nan")) from err
            for k, g in grads.items():
                params.arrays[k] -= lr * g
            for task in TASKS:
                sums[task] += float(losses[task].sum())
        epoch_losses = {task: sums[task] / n for task in TASKS}
        for task, v in epoch_losses.items():
            if not math.isfinite(v):
                raise TrainingDiverged(task.value, t, v)
        if not params.is_finite():
            raise TrainingDiverged("parameters", t, float("nan"))
        trace.weighted_terms.append({task: weights[task] * epoch_losses[task] for task in TASKS})
        next_weights = sched.step(t, epoch_losses)
        mae = rho = None
        if holdout is not None:
            mae, rho = holdout_metrics(params, holdout, focal_length_px)
        trace.summaries.append(EpochSummary(t, lr, mae, rho))
        if next_weights is not None:
            weights = next_weights
    trace.rows = list(sched.trace)
    return params, trace


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_HEADER = ("name", "index", "value")


def write_checkpoint(path: Path, params: ModelParams, focal_length_px: float) -> None:
    """Flat CSV: one row per scalar, ``name,index,value`` with C-order indices."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHECKPOINT_HEADER)
        w.writerow(["meta.feature_dim", 0, params.feature_dim])
        w.writerow(["meta.hidden", 0, params.hidden])
        w.writerow(["meta.focal_length_px", 0, repr(float(focal_length_px))])
        for name in sorted(params.arrays):
            for i, v in enumerate(params.arrays[name].ravel()):
                w.writerow([name, i, repr(float(v))])


def read_checkpoint(path: Path) -> Tuple[ModelParams, float]:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        if tuple(next(r)) != CHECKPOINT_HEADER:
            raise ValueError(f"{path}: not a checkpoint file")
        flat: Dict[str, List[float]] = {}
        for name, _, value in r:
            flat.setdefault(name, []).append(float(value))
    feature_dim = int(flat.pop("meta.feature_dim")[0])
    hidden = int(flat.pop("meta.hidden")[0])
    focal = flat.pop("meta.focal_length_px")[0]
    template = ModelParams.zeros(feature_dim, hidden)
    if set(flat) != set(template.arrays):
        raise ValueError(f"{path}: parameter names do not match a model with hidden={hidden}")
    arrays = {k: np.array(flat[k]).reshape(template.arrays[k].shape) for k in template.arrays}
    return ModelParams(feature_dim, hidden, arrays), focal
