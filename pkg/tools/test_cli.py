"""End-to-end runs of the command-line entry point on tiny budgets."""
import json

import pytest
import yaml

from app.config import config_hash, load_airframe_config, load_evaluation_config
from app.main import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_OK, build_parser, main, run_config_from_args
from app.models import TurbulenceSeverity
from app.utils.io import read_csv, read_header


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def small_eval_config(tmp_path):
    path = tmp_path / "evaluation.yaml"
    path.write_text(yaml.safe_dump({
        "schema_version": 1,
        "episodes_per_setting": 2,
        "horizon_steps": 150,
        "environment": {"max_steps": 150},
    }))
    return path


@pytest.fixture
def trained_run(tmp_path, config_dir):
    out = tmp_path / "train"
    code = main(["train", "--config", str(config_dir / "smoke_training.yaml"), "--seed", "3", "--out", str(out)])
    assert code == EXIT_OK
    return out


def test_run_config_defaults():
    args = build_parser().parse_args(["evaluate"])
    run = run_config_from_args(args)
    assert run.controller == "pid"
    assert run.settings == [TurbulenceSeverity.NONE]
    assert run.output_dir.endswith("evaluate")


def test_smoke_training_emits_checkpoints(trained_run):
    checkpoints = sorted((trained_run / "checkpoints").glob("update_*.npz"))
    assert len(checkpoints) >= 1
    assert (trained_run / "policy.npz").is_file()
    summary = json.loads((trained_run / "summary.json").read_text())
    assert summary["seed"] == 3
    assert summary["updates"] == 4
    log, header = read_csv(trained_run / "training_log.csv")
    assert len(log) == 4
    assert header == {"config_hash": summary["config_hash"], "seed": "3"}


def test_missing_airframe_is_a_config_error(tmp_path):
    code = main(["evaluate", "--airframe", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "out")])
    assert code == EXIT_CONFIG


def test_unknown_config_key_is_a_config_error(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("schema_version: 1\nepisodes_per_setting: 2\nwind_tunnel: true\n")
    assert main(["evaluate", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG


def test_rl_without_checkpoint_exits(tmp_path, small_eval_config):
    code = main(["evaluate", "--controller", "rl", "--config", str(small_eval_config),
                 "--out", str(tmp_path / "out")])
    assert code == EXIT_CHECKPOINT


def test_missing_checkpoint_file_exits(tmp_path, small_eval_config):
    code = main(["evaluate", "--controller", "rl", "--checkpoint", str(tmp_path / "policy.npz"),
                 "--config", str(small_eval_config), "--out", str(tmp_path / "out")])
    assert code == EXIT_CHECKPOINT


def test_evaluate_all_settings_writes_one_table_each(tmp_path, small_eval_config):
    out = tmp_path / "eval"
    code = main(["evaluate", "--config", str(small_eval_config), "--settings", "all",
                 "--seed", "7", "--out", str(out)])
    assert code == EXIT_OK
    for severity in TurbulenceSeverity:
        table, header = read_csv(out / f"pid_{severity.value}.csv")
        assert len(table) == 1
        assert table["episodes"].iloc[0] == 2
        expected = config_hash(load_airframe_config(None), load_evaluation_config(small_eval_config))
        assert header == {"config_hash": expected, "seed": "7"}
    episodes, _ = read_csv(out / "pid_episodes.csv")
    assert len(episodes) == 8


def test_compare_pairs_trained_policy_with_pid(tmp_path, trained_run, small_eval_config):
    out = tmp_path / "compare"
    code = main(["compare", "--checkpoint", str(trained_run / "policy.npz"), "--config", str(small_eval_config),
                 "--episodes", "1", "--out", str(out)])
    assert code == EXIT_OK
    paired, _ = read_csv(out / "comparison.csv")
    assert len(paired) == 1
    assert {"success_rl", "success_pid"} <= set(paired.columns)


def test_simulate_writes_trace(tmp_path, small_eval_config, config_dir):
    out = tmp_path / "sim"
    code = main(["simulate", "--config", str(small_eval_config),
                 "--schedule", str(config_dir / "schedules" / "continuous_tracking.csv"),
                 "--seed", "2", "--out", str(out)])
    assert code == EXIT_OK
    trace, header = read_csv(out / "trace_pid.csv")
    assert header["seed"] == "2"
    assert trace["time_s"].iloc[0] == 0.0
    assert trace["time_s"].iloc[-1] > 20.0
    assert read_header(out / "tracking_pid.csv")["seed"] == "2"
