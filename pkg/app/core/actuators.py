"""
Elevon and throttle actuator dynamics.

Each elevon is a rate-limited, saturated second-order servo; the throttle is a first-order
lag. The controllers command virtual aileron/elevator angles, which are mapped to the two
physical elevons before actuation.
"""
from dataclasses import dataclass, field
from typing import Tuple
import logging
import math

import numpy as np

from app.models import ActuatorConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlCommand:
    """Virtual aileron [rad], virtual elevator [rad] and throttle [0, 1]."""
    aileron: float = 0.0
    elevator: float = 0.0
    throttle: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.aileron, self.elevator, self.throttle])


@dataclass
class ActuatorState:
    # index 0 = right elevon, 1 = left elevon
    elevon_deflection: np.ndarray = field(default_factory=lambda: np.zeros(2))
    elevon_rate: np.ndarray = field(default_factory=lambda: np.zeros(2))
    throttle: float = 0.0

    def copy(self) -> "ActuatorState":
        return ActuatorState(self.elevon_deflection.copy(), self.elevon_rate.copy(), self.throttle)


def map_virtual_to_elevon(delta_a, delta_e) -> Tuple[float, float]:
    """Inverse of the elevon mixing: (right, left) = (de - da, de + da)."""
    return delta_e - delta_a, delta_e + delta_a


def map_elevon_to_virtual(delta_right, delta_left) -> Tuple[float, float]:
    """[da; de] = [[-0.5, 0.5], [0.5, 0.5]] [right; left]"""
    return -0.5 * delta_right + 0.5 * delta_left, 0.5 * delta_right + 0.5 * delta_left


def step_elevon(deflection: np.ndarray, rate: np.ndarray, command: np.ndarray, dt: float,
                cfg: ActuatorConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Advance the servo x1' = x2, x2' = w0^2 (u - x1) - 2 zeta w0 x2 by dt using
    semi-implicit Euler substeps. Rate and deflection are saturated after every substep.
    """
    max_deflection = math.radians(cfg.max_deflection_deg)
    max_rate = math.radians(cfg.max_rate_deg_s)
    w0 = cfg.natural_frequency_rad_s
    zeta = cfg.damping_ratio
    h = dt / cfg.substeps

    x1 = np.array(deflection, dtype=float)
    x2 = np.array(rate, dtype=float)
    u = np.asarray(command, dtype=float)
    for _ in range(cfg.substeps):
        accel = w0 * w0 * (u - x1) - 2.0 * zeta * w0 * x2
        x2 = np.clip(x2 + h * accel, -max_rate, max_rate)
        x1 = x1 + h * x2
        at_limit = np.abs(x1) >= max_deflection
        if np.any(at_limit):
            x1 = np.clip(x1, -max_deflection, max_deflection)
            # a servo resting on its stop cannot keep moving outward
            outward = at_limit & (np.sign(x2) == np.sign(x1))
            x2 = np.where(outward, 0.0, x2)
    return x1, x2


def step_throttle(throttle: float, command: float, dt: float, cfg: ActuatorConfig) -> float:
    """Exact zero-order-hold update of 1 / (T s + 1), clamped to [0, 1]."""
    command = min(1.0, max(0.0, command))
    decay = math.exp(-dt / cfg.throttle_time_constant_s)
    value = command + (throttle - command) * decay
    return min(1.0, max(0.0, value))


class ActuatorModel:
    """Owns the actuator state of one aircraft."""

    def __init__(self, cfg: ActuatorConfig, initial_throttle: float = 0.0):
        self.cfg = cfg
        self.state = ActuatorState(throttle=initial_throttle)

    @property
    def max_deflection_rad(self) -> float:
        return math.radians(self.cfg.max_deflection_deg)

    def reset(self, throttle: float = 0.0, deflection: Tuple[float, float] = (0.0, 0.0)) -> ActuatorState:
        self.state = ActuatorState(np.array(deflection, dtype=float), np.zeros(2), float(throttle))
        return self.state

    def step(self, command: ControlCommand, dt: float) -> ActuatorState:
        right, left = map_virtual_to_elevon(command.aileron, command.elevator)
        deflection, rate = step_elevon(
            self.state.elevon_deflection, self.state.elevon_rate, np.array([right, left]), dt, self.cfg)
        throttle = step_throttle(self.state.throttle, command.throttle, dt, self.cfg)
        self.state = ActuatorState(deflection, rate, throttle)
        return self.state

    def virtual_deflections(self) -> Tuple[float, float]:
        """(aileron, elevator) equivalent of the actual elevon deflections."""
        right, left = self.state.elevon_deflection
        da, de = map_elevon_to_virtual(right, left)
        return float(da), float(de)
