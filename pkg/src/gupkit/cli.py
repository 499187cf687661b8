"""Command-line entry point: ``gupkit {amplify,simulate,train,eval,compare}``.

Exit codes: 0 success, 2 usage/config error, 3 training divergence.
Seeds resolve as ``--seed`` > ``$GUPKIT_SEED`` > the config file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import evaluate, svg
from .geometry import CameraModel, amplification_gain, depth_shift, project_height
from .gup import fuse_scores
from .htl import TASKS
from .synth import SceneConfig, generate, preset, read_dataset, split, to_arrays, write_dataset
from .trainer import (
    TrainConfig,
    TrainingDiverged,
    forward,
    read_checkpoint,
    train,
    write_checkpoint,
    write_trace,
)

logger = logging.getLogger("gupkit")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    tau: float = 2.0
    coverage_level: float = 0.9


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs"
    train_fraction: float = 5.0 / 7.0

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {"scene", "train", "eval", "output_dir", "train_fraction"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            scene_d = dict(data.get("scene", {}))
            name = scene_d.pop("preset", "default")
            scene = preset(name, **scene_d)
            train_cfg = TrainConfig.from_dict(data.get("train", {}))
            eval_d = data.get("eval", {})
            bad = set(eval_d) - {"tau", "coverage_level"}
            if bad:
                raise ConfigError(f"unknown eval keys: {sorted(bad)}")
            eval_cfg = EvalConfig(**eval_d)
            if not (eval_cfg.tau > 0 and 0 < eval_cfg.coverage_level < 1):
                raise ConfigError("eval.tau must be positive and eval.coverage_level in (0, 1)")
            frac = float(data.get("train_fraction", 5.0 / 7.0))
            if not 0 < frac < 1:
                raise ConfigError(f"train_fraction must lie in (0, 1), got {frac}")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(scene, train_cfg, eval_cfg, str(data.get("output_dir", "runs")), frac)

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None:
            return self
        return replace(self, scene=replace(self.scene, seed=seed), train=replace(self.train, seed=seed))


def load_config(path: Optional[str], seed: Optional[int]) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a JSON object")
        cfg = RunConfig.from_dict(data)
    try:
        return cfg.with_seed(seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def resolve_seed(flag: Optional[int]) -> Optional[int]:
    if flag is not None:
        return flag
    env = os.environ.get("GUPKIT_SEED")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"GUPKIT_SEED must be an integer, got {env!r}") from exc
    return None


def _outdir(args, cfg: Optional[RunConfig] = None) -> Path:
    out = Path(args.out if args.out else (cfg.output_dir if cfg else "runs"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _fmt(v: float) -> str:
    return repr(float(v))


def lower_median(values: Sequence[float]) -> float:
    """Median taking the lower middle element for even counts."""
    s = sorted(values)
    return s[(len(s) - 1) // 2]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def amplify_rows(focal: float, h3d: float, depth_min: float, depth_max: float, jitter: float, step: float):
    if not (focal > 0 and h3d > 0 and 0 < depth_min <= depth_max and step > 0 and jitter >= 0):
        raise ConfigError(
            "amplify needs focal > 0, h3d > 0, 0 < depth-min <= depth-max, step > 0, jitter >= 0"
        )
    cam = CameraModel(focal)
    n = int(round((depth_max - depth_min) / step)) + 1
    depths = np.linspace(depth_min, depth_max, n) if n > 1 else np.array([depth_min])
    rows = []
    for d in depths:
        h2d = project_height(cam, h3d, float(d))
        rows.append(
            (float(d), h2d, amplification_gain(cam, h2d), depth_shift(cam, h2d, jitter), depth_shift(cam, h2d, -jitter))
        )
    return rows


def cmd_amplify(args) -> int:
    rows = amplify_rows(args.focal, args.h3d, args.depth_min, args.depth_max, args.jitter, args.step)
    out = _outdir(args)
    path = out / "amplify.csv"
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["depth", "h2d", "gain", "shift_plus", "shift_minus"])
            w.writerows([[_fmt(v) for v in r] for r in rows])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    depths = [r[0] for r in rows]
    panel = svg.Panel(
        f"Depth shift from +/-{args.jitter} m 3D-height jitter (f={args.focal:g} px, h3d={args.h3d:g} m)",
        [
            svg.Series("true depth", depths, depths, color="#2ca02c"),
            svg.Series(f"+{args.jitter} m height", depths, [r[0] + r[3] for r in rows], color="#1f77b4"),
            svg.Series(f"-{args.jitter} m height", depths, [r[0] + r[4] for r in rows], color="#d62728"),
        ],
        xlabel="true depth (m)",
        ylabel="projected depth (m)",
    )
    _write_text(out / "amplify.svg", svg.render([panel]))
    print(f"wrote {path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, resolve_seed(args.seed))
    out = _outdir(args, cfg)
    objects = generate(cfg.scene)
    write_dataset(out / "dataset.csv", objects, cfg.scene.feature_dim)
    print(f"wrote {out / 'dataset.csv'} ({len(objects)} objects)")
    return EXIT_OK


def _normalized(values: Sequence[float]) -> List[float]:
    lo, hi = min(values), max(values)
    return [0.0 if hi == lo else (v - lo) / (hi - lo) for v in values]


def train_figure(trace) -> str:
    epochs = sorted({r.epoch for r in trace.rows})
    loss_panel = svg.Panel("Task losses (min-max normalized)", xlabel="epoch", ylabel="loss")
    weight_panel = svg.Panel("Task loss weights", xlabel="epoch", ylabel="weight")
    for task in TASKS:
        loss_panel.series.append(svg.Series(task.value, epochs, _normalized(trace.column(task, "loss"))))
        weight_panel.series.append(svg.Series(task.value, epochs, trace.weights(task)))
    return svg.render([loss_panel, weight_panel])


def run_training(cfg: RunConfig, scheduler: str):
    objects = generate(cfg.scene)
    if not objects:
        raise ConfigError("scene.n_objects must be positive for training")
    train_objs, holdout_objs = split(objects, cfg.train_fraction, cfg.scene.seed)
    if not train_objs:
        raise ConfigError("training split is empty")
    holdout = to_arrays(holdout_objs, cfg.scene.feature_dim) if holdout_objs else None
    tcfg = replace(cfg.train, scheduler=scheduler)
    params, trace = train(tcfg, to_arrays(train_objs), cfg.scene.focal_length_px, holdout)
    return params, trace, holdout_objs


def cmd_train(args) -> int:
    cfg = load_config(args.config, resolve_seed(args.seed))
    scheduler = args.scheduler or cfg.train.scheduler
    out = _outdir(args, cfg)
    params, trace, holdout_objs = run_training(cfg, scheduler)
    write_trace(out / "trace.csv", trace)
    write_checkpoint(out / "checkpoint.csv", params, cfg.scene.focal_length_px)
    write_dataset(out / "holdout.csv", holdout_objs, cfg.scene.feature_dim)
    _write_text(out / "train.svg", train_figure(trace))
    last = trace.summaries[-1]
    print(f"trained {len(trace.summaries)} epochs ({scheduler}); holdout MAE {last.holdout_mae}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config, None) if args.config else RunConfig()
    tau = args.tau if args.tau is not None else cfg.eval.tau
    level = args.level if args.level is not None else cfg.eval.coverage_level
    for p in (args.checkpoint, args.dataset):
        if not Path(p).is_file():
            raise ConfigError(f"file not found: {p}")
    params, focal = read_checkpoint(Path(args.checkpoint))
    objects, feature_dim = read_dataset(Path(args.dataset))
    if feature_dim != params.feature_dim:
        raise ConfigError(
            f"checkpoint expects feature_dim={params.feature_dim} but dataset has {feature_dim}"
        )
    if not objects:
        raise ConfigError(f"dataset {args.dataset} is empty")
    data = to_arrays(objects)
    o = forward(params, data, focal)
    rep = evaluate.report(o.mu_d, o.sigma_d, data.depth_gt, fuse_scores(data.p2d, o.confidence), tau, level)
    out = _outdir(args, cfg)
    _write_text(out / "report.json", rep.to_json() + "\n")
    print(rep.to_json())
    return EXIT_OK


def compare_runs(cfg: RunConfig, n_seeds: int, base_seed: int):
    """Train both arms on seeds ``base_seed .. base_seed + n - 1``; returns rows (seed, arm, mae)."""
    rows = []
    for s in range(base_seed, base_seed + n_seeds):
        seeded = cfg.with_seed(s)
        for arm in ("htl", "constant"):
            _, trace, _ = run_training(seeded, arm)
            rows.append((s, arm, trace.summaries[-1].holdout_mae))
    return rows


def cmd_compare(args) -> int:
    if args.seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {args.seeds}")
    seed = resolve_seed(args.seed)
    cfg = load_config(args.config, None)
    base = seed if seed is not None else cfg.scene.seed
    out = _outdir(args, cfg)
    rows = compare_runs(cfg, args.seeds, base)
    with (out / "compare.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "scheduler", "holdout_mae"])
        w.writerows([[s, arm, _fmt(m)] for s, arm, m in rows])
    medians = {arm: lower_median([m for _, a, m in rows if a == arm]) for arm in ("htl", "constant")}
    summary = {"seeds": [base + i for i in range(args.seeds)], "median_holdout_mae": medians}
    if not args.deterministic:
        summary["generated_at"] = datetime.now(timezone.utc).isoformat()
    _write_text(out / "compare.json", json.dumps(summary, indent=2) + "\n")
    panel = svg.Panel("Holdout depth MAE per seed", xlabel="arm (0 = HTL, 1 = constant)", ylabel="MAE (m)")
    for k, arm in enumerate(("htl", "constant")):
        maes = [m for _, a, m in rows if a == arm]
        panel.series.append(svg.Series(arm, [float(k)] * len(maes), maes, points_only=True))
        panel.series.append(svg.Series(f"{arm} median", [k - 0.2, k + 0.2], [medians[arm]] * 2))
    _write_text(out / "compare.svg", svg.render([panel]))
    print(json.dumps(summary, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gupkit", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    parser.add_argument("--deterministic", action="store_true", help="omit timestamps from JSON outputs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("amplify", help="depth shift caused by a fixed 3D-height error")
    p.add_argument("--focal", type=float, default=707.0)
    p.add_argument("--h3d", type=float, default=1.5)
    p.add_argument("--depth-min", type=float, default=5.0)
    p.add_argument("--depth-max", type=float, default=80.0)
    p.add_argument("--step", type=float, default=1.0, help="depth spacing in meters")
    p.add_argument("--jitter", type=float, default=0.1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_amplify)

    p = sub.add_parser("simulate", help="generate a synthetic dataset CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the multi-task model and write trace/checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--scheduler", choices=("htl", "constant"), default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--tau", type=float, default=None, help="correctness threshold in meters")
    p.add_argument("--level", type=float, default=None, help="interval coverage level")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="HTL vs constant weights over several seeds")
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"gupkit: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"gupkit: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"gupkit: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # malformed dataset/checkpoint files
        print(f"gupkit: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
