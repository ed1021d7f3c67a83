"""
Exception hierarchy shared by the simulator, the learning services and the CLI.
"""
from pathlib import Path
from typing import Any, Dict, Optional, Union


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ToolkitError):
    """A configuration document is missing, unreadable or invalid."""

    def __init__(self, message: str, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            message = f"{message} (path: {self.path})"
        super().__init__(message)


class SimulationDivergedError(ToolkitError):
    """The dynamics produced a non-finite derivative or state."""


class ShapeError(ToolkitError, ValueError):
    """Network inputs or parameters do not match the network spec."""


class CheckpointError(ToolkitError):
    """A checkpoint cannot be read or does not match the expected spec."""


class TrainingDivergedError(ToolkitError):
    """Training produced a non-finite loss and was aborted."""

    def __init__(self, message: str, last_good_params: Any = None,
                 checkpoint_path: Optional[Path] = None, log: Optional[list] = None):
        super().__init__(message)
        self.last_good_params = last_good_params
        self.checkpoint_path = checkpoint_path
        self.log = log or []

    def details(self) -> Dict[str, Any]:
        return {
            "message": str(self),
            "checkpoint_path": str(self.checkpoint_path) if self.checkpoint_path else None,
            "updates_logged": len(self.log),
        }
