import csv
import json

import pytest

from gupkit.cli import EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, lower_median, main
from gupkit.synth import SceneConfig, generate, write_dataset
from gupkit.trainer import ModelParams, write_checkpoint

TINY = {
    "scene": {"n_objects": 140, "seed": 1},
    "train": {"total_epochs": 8, "window": 2, "warmup_epochs": 2},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_amplify_reference_configuration(tmp_path):
    assert main(["amplify", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "amplify.csv")
    assert rows[0] == ["depth", "h2d", "gain", "shift_plus", "shift_minus"]
    row60 = next(r for r in rows[1:] if float(r[0]) == 60.0)
    assert float(row60[3]) == pytest.approx(4.0, abs=1e-9)
    assert float(row60[4]) == pytest.approx(-4.0, abs=1e-9)
    assert len(rows) == 77
    assert (tmp_path / "amplify.svg").read_text().startswith("<svg")


def test_amplify_zero_jitter(tmp_path):
    assert main(["amplify", "--jitter", "0", "--out", str(tmp_path)]) == EXIT_OK
    assert all(float(r[3]) == 0 and float(r[4]) == 0 for r in _rows(tmp_path / "amplify.csv")[1:])


def test_amplify_single_row(tmp_path):
    assert main(["amplify", "--depth-min", "30", "--depth-max", "30", "--out", str(tmp_path)]) == EXIT_OK
    assert len(_rows(tmp_path / "amplify.csv")) == 2


@pytest.mark.parametrize("argv", [["--focal", "0"], ["--depth-min", "50", "--depth-max", "10"], ["--jitter", "-1"]])
def test_amplify_bad_arguments(tmp_path, argv):
    assert main(["amplify", *argv, "--out", str(tmp_path)]) == EXIT_USAGE


def test_amplify_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["amplify", "--out", str(blocker / "sub")]) == EXIT_USAGE


def test_simulate_deterministic(tmp_path, tiny_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", tiny_config, "--out", str(a)]) == EXIT_OK
    assert main(["simulate", "--config", tiny_config, "--out", str(b)]) == EXIT_OK
    assert (a / "dataset.csv").read_bytes() == (b / "dataset.csv").read_bytes()
    assert len(_rows(a / "dataset.csv")) == 141


def test_simulate_header_only(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scene": {"n_objects": 0}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    assert len(_rows(tmp_path / "dataset.csv")) == 1


@pytest.mark.parametrize(
    "content",
    [None, "{not json", json.dumps({"bogus": 1}), json.dumps({"scene": {"n_objects": -3}}), json.dumps({"scene": {"preset": "x"}})],
)
def test_simulate_config_errors(tmp_path, content):
    cfg = tmp_path / "c.json"
    if content is not None:
        cfg.write_text(content)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE


def test_seed_precedence(tmp_path, tiny_config, monkeypatch):
    monkeypatch.setenv("GUPKIT_SEED", "5")
    main(["simulate", "--config", tiny_config, "--out", str(tmp_path / "env")])
    main(["--seed", "5", "simulate", "--config", tiny_config, "--out", str(tmp_path / "flag")])
    main(["--seed", "1", "simulate", "--config", tiny_config, "--out", str(tmp_path / "one")])
    env = (tmp_path / "env" / "dataset.csv").read_bytes()
    assert env == (tmp_path / "flag" / "dataset.csv").read_bytes()
    assert env != (tmp_path / "one" / "dataset.csv").read_bytes()


def _weights(trace_path, task):
    return [float(r["weight"]) for r in csv.DictReader(open(trace_path)) if r["task"] == task]


def test_train_outputs(tmp_path, tiny_config):
    out = tmp_path / "htl"
    assert main(["train", "--config", tiny_config, "--out", str(out)]) == EXIT_OK
    for name in ("trace.csv", "checkpoint.csv", "holdout.csv", "train.svg"):
        assert (out / name).is_file()
    assert _weights(out / "trace.csv", "heatmap") == [1.0] * 8
    assert _weights(out / "trace.csv", "depth")[0] == pytest.approx(1 / 8)
    assert main(["train", "--config", tiny_config, "--scheduler", "constant", "--out", str(tmp_path / "c")]) == EXIT_OK
    for task in ("heatmap", "angle", "depth"):
        assert _weights(tmp_path / "c" / "trace.csv", task) == [1.0] * 8


def test_train_divergence_exit_code(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**TINY, "train": {**TINY["train"], "learning_rate": 10.0, "warmup_epochs": 0}}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_DIVERGED


def test_eval_report(tmp_path, tiny_config):
    main(["train", "--config", tiny_config, "--out", str(tmp_path)])
    args = ["eval", "--checkpoint", str(tmp_path / "checkpoint.csv"), "--dataset", str(tmp_path / "holdout.csv")]
    assert main([*args, "--out", str(tmp_path / "e1")]) == EXIT_OK
    assert main([*args, "--out", str(tmp_path / "e2")]) == EXIT_OK
    text = (tmp_path / "e1" / "report.json").read_text()
    assert text == (tmp_path / "e2" / "report.json").read_text()
    assert list(json.loads(text)) == [
        "depth_mae_m",
        "spearman_sigma_vs_abserr",
        "interval_coverage_90",
        "confidence_auroc",
        "n_objects",
    ]


def test_eval_untrained_checkpoint(tmp_path):
    write_checkpoint(tmp_path / "ck.csv", ModelParams.init(8, 0), 707.0)
    write_dataset(tmp_path / "d.csv", generate(SceneConfig(n_objects=30)), 8)
    argv = ["eval", "--checkpoint", str(tmp_path / "ck.csv"), "--dataset", str(tmp_path / "d.csv"), "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    assert json.loads((tmp_path / "report.json").read_text())["n_objects"] == 30


def test_eval_feature_dim_mismatch(tmp_path):
    write_checkpoint(tmp_path / "ck.csv", ModelParams.init(4, 0), 707.0)
    write_dataset(tmp_path / "d.csv", generate(SceneConfig(n_objects=5)), 8)
    argv = ["eval", "--checkpoint", str(tmp_path / "ck.csv"), "--dataset", str(tmp_path / "d.csv"), "--out", str(tmp_path)]
    assert main(argv) == EXIT_USAGE


def test_eval_malformed_dataset(tmp_path):
    write_checkpoint(tmp_path / "ck.csv", ModelParams.init(8, 0), 707.0)
    (tmp_path / "d.csv").write_text("a,b\n1,2\n")
    argv = ["eval", "--checkpoint", str(tmp_path / "ck.csv"), "--dataset", str(tmp_path / "d.csv"), "--out", str(tmp_path)]
    assert main(argv) == EXIT_USAGE


def test_compare(tmp_path, tiny_config):
    out = tmp_path / "cmp"
    assert main(["--deterministic", "compare", "--config", tiny_config, "--seeds", "1", "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "compare.csv")
    assert rows[0] == ["seed", "scheduler", "holdout_mae"]
    assert [r[:2] for r in rows[1:]] == [["1", "htl"], ["1", "constant"]]
    summary = json.loads((out / "compare.json").read_text())
    assert "generated_at" not in summary
    assert main(["compare", "--config", tiny_config, "--seeds", "1", "--out", str(tmp_path / "ts")]) == EXIT_OK
    assert "generated_at" in json.loads((tmp_path / "ts" / "compare.json").read_text())
    assert (tmp_path / "ts" / "compare.csv").read_bytes() == (out / "compare.csv").read_bytes()


def test_compare_rejects_zero_seeds(tmp_path, tiny_config):
    assert main(["compare", "--config", tiny_config, "--seeds", "0", "--out", str(tmp_path)]) == EXIT_USAGE


def test_lower_median():
    assert lower_median([3.0]) == 3.0
    assert lower_median([4.0, 1.0, 3.0, 2.0]) == 2.0
    assert lower_median([5.0, 1.0, 3.0]) == 3.0


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
