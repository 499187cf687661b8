"""Hierarchical loss weighting driven by how well each task's pre-tasks learn.

Each task ``i`` gets a per-epoch weight ``w_i(t) = (t / T) ** (1 - alpha_i(t))``
where ``alpha_i`` is the product of the learning-situation indicators of its
pre-tasks.  A task's indicator compares its recent mean absolute loss slope
with the slope over its first full window::

    DF_j(t) = mean(|L_j(s) - L_j(s - 1)| for s in t-K .. t-1)
    ls_j(t) = clamp((DF_base - DF_j(t)) / DF_base, 0, 1)

Epoch indices are 1-based.  The weight for epoch ``t`` only uses losses of
epochs ``1 .. t-1``.  The first slope exists at epoch 2, so the earliest full
window is ``2 .. K+1`` and ``DF_base = DF_j(K + 2)``; before that ``ls`` is 0.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

logger = logging.getLogger(__name__)


class TaskId(str, enum.Enum):
    HEATMAP = "heatmap"
    OFFSET2D = "offset2d"
    SIZE2D = "size2d"
    ANGLE = "angle"
    OFFSET3D = "offset3d"
    SIZE3D = "size3d"
    DEPTH = "depth"

    @property
    def stage(self) -> int:
        return _STAGES[self]


_STAGES = {
    TaskId.HEATMAP: 1,
    TaskId.OFFSET2D: 1,
    TaskId.SIZE2D: 1,
    TaskId.ANGLE: 2,
    TaskId.OFFSET3D: 2,
    TaskId.SIZE3D: 2,
    TaskId.DEPTH: 3,
}

TASKS: Tuple[TaskId, ...] = tuple(TaskId)
STAGE1 = frozenset(t for t in TASKS if t.stage == 1)


class ScheduleError(RuntimeError):
    """Raised when history is too short or epochs arrive out of order."""


@dataclass(frozen=True)
class TaskGraph:
    pre_tasks: Mapping[TaskId, frozenset]

    def __post_init__(self) -> None:
        missing = set(TASKS) - set(self.pre_tasks)
        if missing:
            raise ValueError(f"task graph lacks entries for {sorted(t.value for t in missing)}")
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        state: Dict[TaskId, int] = {}

        def visit(node: TaskId) -> None:
            if state.get(node) == 1:
                raise ValueError(f"task graph has a cycle through {node.value}")
            if state.get(node) == 2:
                return
            state[node] = 1
            for pre in self.pre_tasks[node]:
                visit(pre)
            state[node] = 2

        for node in self.pre_tasks:
            visit(node)

    @classmethod
    def default(cls) -> "TaskGraph":
        """2D detection -> 3D heads -> depth, with depth needing 2D tasks and 3D size."""
        return cls(
            {
                TaskId.HEATMAP: frozenset(),
                TaskId.OFFSET2D: frozenset(),
                TaskId.SIZE2D: frozenset(),
                TaskId.ANGLE: STAGE1,
                TaskId.OFFSET3D: STAGE1,
                TaskId.SIZE3D: STAGE1,
                TaskId.DEPTH: STAGE1 | {TaskId.SIZE3D},
            }
        )


@dataclass(frozen=True)
class ScheduleConfig:
    total_epochs: int = 140
    window: int = 5

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.total_epochs < self.window:
            raise ValueError(
                f"total_epochs ({self.total_epochs}) must be >= window ({self.window})"
            )


@dataclass
class LossHistory:
    """Append-only per-task epoch-mean losses; epoch ``t`` lives at index ``t - 1``."""

    values: Dict[TaskId, List[float]] = field(default_factory=lambda: {t: [] for t in TASKS})

    @property
    def epochs(self) -> int:
        return len(next(iter(self.values.values()), ()))

    def append(self, losses: Mapping[TaskId, float]) -> None:
        if set(losses) != set(self.values):
            raise ValueError("epoch losses must cover exactly the tracked tasks")
        for task, v in losses.items():
            self.values[task].append(float(v))

    def loss(self, task: TaskId, t: int) -> float:
        if not 1 <= t <= len(self.values[task]):
            raise ScheduleError(f"no loss recorded for {task.value} at epoch {t}")
        return self.values[task][t - 1]

    @classmethod
    def from_sequences(cls, seqs: Mapping[TaskId, Iterable[float]]) -> "LossHistory":
        values = {t: [float(v) for v in s] for t, s in seqs.items()}
        if len({len(v) for v in values.values()}) > 1:
            raise ValueError("loss sequences must have equal length")
        return cls(values)


def loss_derivative(h: LossHistory, task: TaskId, t: int) -> float:
    """Backward difference ``L(t) - L(t - 1)``."""
    if t < 2:
        raise ScheduleError(f"loss derivative needs t >= 2, got {t}")
    return h.loss(task, t) - h.loss(task, t - 1)


def df(h: LossHistory, task: TaskId, t: int, window: int) -> float:
    """Mean absolute loss slope over epochs ``t - window .. t - 1``."""
    if t - window < 2:
        raise ScheduleError(f"DF at epoch {t} with window {window} needs slopes before epoch 2")
    return sum(abs(loss_derivative(h, task, s)) for s in range(t - window, t)) / window


def first_full_epoch(window: int) -> int:
    """Earliest epoch at which a full slope window exists."""
    return window + 2


def ls_from_df(df_base: float, df_now: float) -> float:
    """Clamped relative drop of the loss slope; 0 when the baseline is flat."""
    if df_base == 0:
        return 0.0
    return min(1.0, max(0.0, (df_base - df_now) / df_base))


def ls(h: LossHistory, task: TaskId, t: int, cfg: ScheduleConfig) -> float:
    t0 = first_full_epoch(cfg.window)
    if t <= t0:
        return 0.0
    base = df(h, task, t0, cfg.window)
    if base == 0:
        logger.warning("task %s had a flat loss over its first window; ls := 0", task.value)
    return ls_from_df(base, df(h, task, t, cfg.window))


def alpha(g: TaskGraph, h: LossHistory, task: TaskId, t: int, cfg: ScheduleConfig) -> float:
    return math.prod(ls(h, j, t, cfg) for j in g.pre_tasks[task])


def weight(task: TaskId, t: int, cfg: ScheduleConfig, alpha_value: float) -> float:
    if not 1 <= t <= cfg.total_epochs:
        raise ScheduleError(f"epoch {t} outside 1..{cfg.total_epochs} for task {task.value}")
    if not 0.0 <= alpha_value <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha_value}")
    return (t / cfg.total_epochs) ** (1.0 - alpha_value)


def weighted_total(
    losses: Mapping[TaskId, float], weights: Mapping[TaskId, float]
) -> Tuple[float, Dict[TaskId, float]]:
    """Return the weighted sum of task losses and the per-task weighted terms."""
    if set(losses) != set(weights):
        raise KeyError(
            f"loss/weight task mismatch: {sorted(map(str, set(losses) ^ set(weights)))}"
        )
    terms = {k: weights[k] * losses[k] for k in losses}
    return sum(terms.values()), terms


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    task: TaskId
    loss: float
    df: Optional[float]
    ls: float
    alpha: float
    weight: float


TRACE_HEADER = ("epoch", "task", "loss", "df", "ls", "alpha", "weight")


class HTLScheduler:
    """Stateful per-epoch weight controller.

    ``weights(t)`` gives the weights to use during epoch ``t``.  After the
    epoch finishes, ``step(t, losses)`` records the epoch-mean losses, emits
    one trace row per task describing epoch ``t`` and returns the weights for
    epoch ``t + 1`` (or ``None`` after the last epoch).  With
    ``constant=True`` every weight is 1 but the indicators are still traced.
    """

    def __init__(self, cfg: ScheduleConfig, graph: Optional[TaskGraph] = None, constant: bool = False):
        self.cfg = cfg
        self.graph = graph or TaskGraph.default()
        self.constant = constant
        self.history = LossHistory()
        self.trace: List[TraceRow] = []

    def _state(self, t: int):
        K = self.cfg.window
        ls_t = {j: ls(self.history, j, t, self.cfg) for j in TASKS}
        df_t = {j: (df(self.history, j, t, K) if t - K >= 2 else None) for j in TASKS}
        alpha_t = {i: math.prod(ls_t[j] for j in self.graph.pre_tasks[i]) for i in TASKS}
        if self.constant:
            w = {i: 1.0 for i in TASKS}
        else:
            w = {i: weight(i, t, self.cfg, alpha_t[i]) for i in TASKS}
        return df_t, ls_t, alpha_t, w

    def weights(self, t: int) -> Dict[TaskId, float]:
        if self.history.epochs != t - 1:
            raise ScheduleError(
                f"weights for epoch {t} requested with {self.history.epochs} epochs recorded"
            )
        return self._state(t)[3]

    def step(self, t: int, losses: Mapping[TaskId, float]) -> Optional[Dict[TaskId, float]]:
        if t != self.history.epochs + 1:
            raise ScheduleError(f"expected epoch {self.history.epochs + 1}, got {t}")
        if t > self.cfg.total_epochs:
            raise ScheduleError(f"epoch {t} beyond total_epochs {self.cfg.total_epochs}")
        df_t, ls_t, alpha_t, w = self._state(t)
        self.history.append(losses)
        for task in TASKS:
            self.trace.append(
                TraceRow(t, task, float(losses[task]), df_t[task], ls_t[task], alpha_t[task], w[task])
            )
        if t == self.cfg.total_epochs:
            return None
        return self._state(t + 1)[3]
