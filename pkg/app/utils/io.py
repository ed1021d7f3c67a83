"""
CSV and JSON artifacts. Every CSV carries a one-line header comment with the config hash and seed.
"""
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union
import json
import logging

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def header_line(config_hash: str, seed: int) -> str:
    return f"# config_hash={config_hash} seed={seed}\n"


def write_csv(frame: pd.DataFrame, path: PathLike, config_hash: str, seed: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(header_line(config_hash, seed))
        frame.to_csv(f, index=False, float_format="%.10g")
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def read_header(path: PathLike) -> Dict[str, str]:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
    if not first.startswith("#"):
        return {}
    fields = {}
    for token in first.lstrip("#").split():
        key, _, value = token.partition("=")
        fields[key] = value
    return fields


def read_csv(path: PathLike) -> Tuple[pd.DataFrame, Dict[str, str]]:
    return pd.read_csv(path, comment="#"), read_header(path)


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(data: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def ensure_dir(path: Optional[PathLike]) -> Path:
    path = Path(path or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path
