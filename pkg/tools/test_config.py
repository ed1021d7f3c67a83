import numpy as np
import pandas as pd
import pytest

from app.config import (Settings, config_hash, dump_config, load_airframe_config, load_config,
                        load_evaluation_config, load_training_config)
from app.errors import ConfigError
from app.models import AirframeConfig, EvaluationConfig, TrainingConfig
from app.utils.io import read_csv, read_json, write_csv, write_json
from app.utils.seeding import derive_seed, make_rng
from app.utils.version_check import check_package_version, verify_compatibility


def test_shipped_configs_load(config_dir):
    airframe = load_airframe_config(config_dir / "airframe_x8.yaml")
    assert airframe.name == "skywalker-x8"
    assert airframe.inertial == AirframeConfig().inertial
    assert airframe.aero.air_density_kg_m3 == airframe.propulsion.air_density_kg_m3 == 1.225
    training = load_training_config(config_dir / "training.yaml")
    assert training.ppo == TrainingConfig().ppo
    assert training.curriculum == TrainingConfig().curriculum
    smoke = load_training_config(config_dir / "smoke_training.yaml")
    assert smoke.ppo.total_steps == 1000
    evaluation = load_evaluation_config(config_dir / "evaluation.yaml")
    assert evaluation.episodes_per_setting == 100
    assert evaluation.horizon_steps == 1500


def test_defaults_without_a_path():
    assert load_airframe_config(None) == AirframeConfig()
    assert load_evaluation_config(None) == EvaluationConfig()


def test_unknown_key_is_rejected(tmp_path):
    path = tmp_path / "training.yaml"
    path.write_text("schema_version: 1\nppo:\n  n_actors: 2\n  warp_drive: 9\n")
    with pytest.raises(ConfigError) as info:
        load_training_config(path)
    assert info.value.path == path


def test_wrong_schema_version_is_rejected(tmp_path):
    path = tmp_path / "evaluation.yaml"
    path.write_text("schema_version: 2\n")
    with pytest.raises(ConfigError):
        load_evaluation_config(path)


def test_non_mapping_and_missing_documents(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(path, TrainingConfig)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml", TrainingConfig)


def test_dumped_config_reloads_with_same_hash(tmp_path):
    cfg = TrainingConfig()
    dump_config(cfg, tmp_path / "training.yaml")
    reloaded = load_training_config(tmp_path / "training.yaml")
    assert config_hash(reloaded) == config_hash(cfg)


def test_config_hash_tracks_content():
    base = config_hash(AirframeConfig(), EvaluationConfig())
    assert base == config_hash(AirframeConfig(), EvaluationConfig())
    assert base != config_hash(AirframeConfig(), EvaluationConfig(episodes_per_setting=5))
    assert len(base) == 64


def test_settings_read_prefixed_environment(monkeypatch):
    monkeypatch.setenv("FWRL_NUM_WORKERS", "3")
    monkeypatch.setenv("FWRL_VECTOR_BACKEND", "subprocess")
    current = Settings(_env_file=None)
    assert current.NUM_WORKERS == 3
    assert current.VECTOR_BACKEND == "subprocess"


def test_named_streams_are_independent():
    a = make_rng(11, "env", 0).random(4)
    assert np.array_equal(a, make_rng(11, "env", 0).random(4))
    assert not np.array_equal(a, make_rng(11, "wind", 0).random(4))
    assert not np.array_equal(a, make_rng(11, "env", 1).random(4))
    assert derive_seed(11, "wind", 2, 3) == derive_seed(11, "wind", 2, 3)
    assert 0 <= derive_seed(11, "wind", 2, 3) < 2 ** 63


def test_csv_and_json_artifacts(tmp_path):
    frame = pd.DataFrame({"a": [1.0, 2.5], "b": ["x", "y"]})
    path = write_csv(frame, tmp_path / "nested" / "table.csv", "abc123", 42)
    assert path.read_text().splitlines()[0] == "# config_hash=abc123 seed=42"
    loaded, header = read_csv(path)
    pd.testing.assert_frame_equal(loaded, frame)
    assert header == {"config_hash": "abc123", "seed": "42"}

    write_json({"value": np.float64(1.5), "array": np.arange(3)}, tmp_path / "out.json")
    assert read_json(tmp_path / "out.json") == {"value": 1.5, "array": [0, 1, 2]}


def test_version_checks():
    ok, installed, error = check_package_version("numpy", "1.0")
    assert ok and installed and error is None
    ok, installed, error = check_package_version("surely-not-installed-pkg", "1.0")
    assert not ok and installed is None and "not found" in error
    assert verify_compatibility(required={"numpy": "1.0"})
    assert not verify_compatibility(required={"numpy": "999.0"})


def test_relative_paths_fall_back_to_config_dir(tmp_path, monkeypatch):
    (tmp_path / "configs").mkdir()
    (tmp_path / "configs" / "eval.yaml").write_text("schema_version: 1\nepisodes_per_setting: 3\n")
    monkeypatch.chdir(tmp_path)
    assert load_evaluation_config("eval.yaml").episodes_per_setting == 3
