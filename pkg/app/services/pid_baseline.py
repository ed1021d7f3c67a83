"""
Fixed-gain PID autopilot: throttle tracks airspeed, virtual aileron tracks roll and
virtual elevator tracks pitch. Errors are e = x - x_target; the integrals use forward Euler.
"""
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple
import logging
import math

import numpy as np

from app.core.actuators import ControlCommand
from app.core.rigid_body import wrap_angle
from app.models import PidGains
from app.services.environment import Targets, commands_to_action

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PidIntegrators:
    airspeed: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0


def _conditional_integral(integral: float, error: float, ki: float, raw: float, saturated: float, dt: float) -> float:
    """Forward-Euler integration, held while the output is saturated and the integral would push it further."""
    if raw == saturated:
        return integral + error * dt
    # integrating e moves the output by -ki * e dt
    push = -ki * error
    if push == 0.0 or np.sign(push) == np.sign(raw - saturated):
        return integral
    return integral + error * dt


def pid_step(measurements: Mapping[str, float], targets: Targets, integrators: PidIntegrators,
             gains: PidGains, dt: float = 0.01, max_deflection_rad: float = math.radians(30.0)
             ) -> Tuple[ControlCommand, PidIntegrators, Dict[str, float]]:
    """
    One controller update.

    Returns the saturated command, the updated integrators and the unsaturated outputs.
    """
    e_v = measurements["airspeed"] - targets.airspeed
    e_roll = wrap_angle(measurements["roll"] - targets.roll)
    e_pitch = wrap_angle(measurements["pitch"] - targets.pitch)

    raw_throttle = -gains.kp_airspeed * e_v - gains.ki_airspeed * integrators.airspeed
    raw_aileron = -gains.kp_roll * e_roll - gains.ki_roll * integrators.roll - gains.kd_roll * measurements["p"]
    raw_elevator = -gains.kp_pitch * e_pitch - gains.ki_pitch * integrators.pitch - gains.kd_pitch * measurements["q"]

    throttle = min(1.0, max(0.0, raw_throttle))
    aileron = min(max_deflection_rad, max(-max_deflection_rad, raw_aileron))
    elevator = min(max_deflection_rad, max(-max_deflection_rad, raw_elevator))

    updated = PidIntegrators(
        airspeed=_conditional_integral(integrators.airspeed, e_v, gains.ki_airspeed, raw_throttle, throttle, dt),
        roll=_conditional_integral(integrators.roll, e_roll, gains.ki_roll, raw_aileron, aileron, dt),
        pitch=_conditional_integral(integrators.pitch, e_pitch, gains.ki_pitch, raw_elevator, elevator, dt),
    )
    raw = {"aileron": raw_aileron, "elevator": raw_elevator, "throttle": raw_throttle}
    return ControlCommand(aileron, elevator, throttle), updated, raw


class PidController:
    """Stateful wrapper producing normalized actions for the environment."""

    name = "pid"

    def __init__(self, gains: PidGains, dt: float = 0.01, max_deflection_rad: float = math.radians(30.0)):
        self.gains = gains
        self.dt = dt
        self.max_deflection_rad = max_deflection_rad
        self.integrators = PidIntegrators()

    def reset(self) -> None:
        self.integrators = PidIntegrators()

    def command(self, measurements: Mapping[str, float], targets: Targets) -> ControlCommand:
        command, self.integrators, _ = pid_step(
            measurements, targets, self.integrators, self.gains, self.dt, self.max_deflection_rad)
        return command

    def act(self, raw_obs: np.ndarray, env) -> np.ndarray:
        command = self.command(env.measurements(), env.targets)
        return commands_to_action(command, self.max_deflection_rad)
