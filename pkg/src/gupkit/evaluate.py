"""Holdout metrics for depth accuracy, calibration and confidence ranking."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalReport:
    depth_mae_m: float
    spearman_sigma_vs_abserr: float
    interval_coverage_90: float
    confidence_auroc: float
    n_objects: int

    def __post_init__(self) -> None:
        for name in ("depth_mae_m", "spearman_sigma_vs_abserr", "interval_coverage_90", "confidence_auroc"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")
        if not (0 <= self.interval_coverage_90 <= 1 and 0 <= self.confidence_auroc <= 1):
            raise ValueError("coverage and AUROC must lie in [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=False)


def depth_mae(mu_d, d_gt) -> float:
    mu_d = np.asarray(mu_d, dtype=float)
    if mu_d.size == 0:
        raise ValueError("depth_mae of an empty prediction set")
    return float(np.mean(np.abs(mu_d - np.asarray(d_gt, dtype=float))))


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties.

    Mismatched lengths, fewer than two points, or a constant input give 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        logger.warning("spearman: need two equal-length sequences of size >= 2; returning 0")
        return 0.0
    rx, ry = rankdata(x) - (x.size + 1) / 2.0, rankdata(y) - (y.size + 1) / 2.0
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0:
        logger.warning("spearman: constant input; returning 0")
        return 0.0
    return float(rx @ ry) / denom


def coverage(mu_d, sigma_d, d_gt, level: float = 0.9) -> float:
    """Fraction of targets inside the central ``level`` Laplace interval."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    mu_d = np.asarray(mu_d, dtype=float)
    if mu_d.size == 0:
        raise ValueError("coverage of an empty prediction set")
    half = np.asarray(sigma_d, dtype=float) / math.sqrt(2.0) * math.log(1.0 / (1.0 - level))
    return float(np.mean(np.abs(np.asarray(d_gt, dtype=float) - mu_d) <= half))


def confidence_auroc(scores, correct) -> float:
    """P(score of a random correct item > score of a random incorrect one), ties count 1/2."""
    scores = np.asarray(scores, dtype=float)
    correct = np.asarray(correct, dtype=bool)
    n_pos = int(correct.sum())
    n_neg = correct.size - n_pos
    if n_pos == 0 or n_neg == 0:
        logger.warning("confidence_auroc: only one class present; returning 0.5")
        return 0.5
    ranks = rankdata(scores)
    u = ranks[correct].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def report(mu_d, sigma_d, d_gt, p3d, tau: float = 2.0, level: float = 0.9) -> EvalReport:
    mu_d = np.asarray(mu_d, dtype=float)
    d_gt = np.asarray(d_gt, dtype=float)
    err = np.abs(mu_d - d_gt)
    return EvalReport(
        depth_mae_m=depth_mae(mu_d, d_gt),
        spearman_sigma_vs_abserr=spearman(sigma_d, err),
        interval_coverage_90=coverage(mu_d, sigma_d, d_gt, level),
        confidence_auroc=confidence_auroc(p3d, err < tau),
        n_objects=int(mu_d.size),
    )
