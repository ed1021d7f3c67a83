from pathlib import Path

import numpy as np
import pytest

from app.models import AirframeConfig, EnvironmentConfig, EvaluationConfig, NetworkSpec

ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = ROOT / "configs"


@pytest.fixture
def airframe() -> AirframeConfig:
    return AirframeConfig()


@pytest.fixture
def env_cfg() -> EnvironmentConfig:
    return EnvironmentConfig(max_steps=200)


@pytest.fixture
def small_spec() -> NetworkSpec:
    return NetworkSpec(n_components=4, history_length=3, conv_filters=2, hidden_sizes=(5, 4))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def eval_cfg() -> EvaluationConfig:
    return EvaluationConfig(episodes_per_setting=4, horizon_steps=300,
                            environment=EnvironmentConfig(max_steps=300))


@pytest.fixture
def config_dir() -> Path:
    return CONFIG_DIR
