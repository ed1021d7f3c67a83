from pathlib import Path
from typing import Literal, Optional, Type, TypeVar, Union
import hashlib
import json
import logging

import yaml
from pydantic import BaseModel, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.errors import ConfigError
from app.models import AirframeConfig, EvaluationConfig, TrainingConfig

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = "logs"
    OUTPUT_DIR: str = "runs"
    CONFIG_DIR: str = "configs"

    # Parallelism
    NUM_WORKERS: int = 1
    VECTOR_BACKEND: Literal["sync", "subprocess"] = "sync"

    model_config = SettingsConfigDict(env_file=".env", env_prefix="FWRL_", extra="ignore")


settings = Settings()


def load_config(path: Union[str, Path], model: Type[ModelT]) -> ModelT:
    """
    Read a YAML document and validate it against `model`.

    A relative path that does not exist is looked up under FWRL_CONFIG_DIR.
    """
    path = Path(path)
    if not path.is_file() and not path.is_absolute() and (Path(settings.CONFIG_DIR) / path).is_file():
        path = Path(settings.CONFIG_DIR) / path
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config: {str(e)}", path) from e
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping", path)
    try:
        config = model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid {model.__name__}: {e}", path) from e
    logger.info(f"Loaded {model.__name__} from {path}")
    return config


def load_airframe_config(path: Optional[Union[str, Path]] = None) -> AirframeConfig:
    """Airframe document, or the built-in defaults when no path is given."""
    from app.core.aerodynamics import validate_drag_positive

    config = load_config(path, AirframeConfig) if path is not None else AirframeConfig()
    try:
        validate_drag_positive(config.aero)
    except ValueError as e:
        raise ConfigError(str(e), path) from e
    return config


def load_training_config(path: Optional[Union[str, Path]] = None) -> TrainingConfig:
    return load_config(path, TrainingConfig) if path is not None else TrainingConfig()


def load_evaluation_config(path: Optional[Union[str, Path]] = None) -> EvaluationConfig:
    return load_config(path, EvaluationConfig) if path is not None else EvaluationConfig()


def dump_config(config: BaseModel, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False)


def config_hash(*configs: BaseModel) -> str:
    """SHA-256 over the canonical JSON dumps of the given configs."""
    digest = hashlib.sha256()
    for config in configs:
        canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        digest.update(canonical.encode("utf-8"))
    return digest.hexdigest()
