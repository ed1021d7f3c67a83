"""
Fixed-wing aircraft composed from the rigid body, aerodynamics, propulsion and actuators.
"""
from dataclasses import dataclass, replace
from typing import Optional, Sequence
import logging
import math

import numpy as np

from app.core.actuators import ActuatorModel, ActuatorState, ControlCommand, map_elevon_to_virtual
from app.core.aerodynamics import AirData, aero_wrench, compute_airdata
from app.core.atmosphere import WindSample
from app.core.propulsion import propulsion_wrench
from app.core.rigid_body import (
    POS, QUAT, VEL, BodyWrench, InertialProperties, SimState,
    euler_to_quat, integrate_step, rotation_matrix,
)
from app.models import AirframeConfig

logger = logging.getLogger(__name__)

CALM = WindSample(np.zeros(3), np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class AircraftState:
    body: SimState
    actuators: ActuatorState
    command: ControlCommand = ControlCommand()
    time_s: float = 0.0

    @property
    def altitude(self) -> float:
        return float(-self.body.position[2])

    def euler(self):
        return self.body.euler()

    def virtual_deflections(self):
        da, de = map_elevon_to_virtual(*self.actuators.elevon_deflection)
        return float(da), float(de)


def body_velocity_from_airdata(airspeed: float, alpha: float, beta: float) -> np.ndarray:
    """Relative body velocity [u, v, w] with the given airspeed and flow angles."""
    return airspeed * np.array([
        math.cos(alpha) * math.cos(beta),
        math.sin(beta),
        math.sin(alpha) * math.cos(beta),
    ])


def initial_state_from_airdata(airspeed: float, alpha: float, beta: float,
                               roll: float, pitch: float, yaw: float,
                               rates: Sequence[float] = (0.0, 0.0, 0.0),
                               steady_wind_ned: Optional[np.ndarray] = None,
                               altitude: float = 500.0, throttle: float = 0.0) -> AircraftState:
    """
    Aircraft state whose initial air-relative motion matches (airspeed, alpha, beta).

    The inertial body velocity adds the steady wind rotated into the body frame.
    """
    q = euler_to_quat(roll, pitch, yaw)
    v_rel = body_velocity_from_airdata(airspeed, alpha, beta)
    wind = np.zeros(3) if steady_wind_ned is None else np.asarray(steady_wind_ned, dtype=float)
    velocity = v_rel + rotation_matrix(q).T @ wind
    body = SimState(np.array([0.0, 0.0, -altitude]), q, velocity, np.asarray(rates, dtype=float))
    return AircraftState(body, ActuatorState(throttle=float(throttle)), ControlCommand(throttle=float(throttle)))


class FixedWingAircraft:
    """Owns the rigid-body and actuator state of one aircraft and advances both."""

    def __init__(self, cfg: AirframeConfig):
        self.cfg = cfg
        self.inertial = InertialProperties(
            cfg.inertial.mass_kg, np.array(cfg.inertial.inertia_matrix()), cfg.inertial.gravity_m_s2)
        self.actuators = ActuatorModel(cfg.actuators)
        self._x = SimState.at_rest().as_vector()
        self._command = ControlCommand()
        self._time = 0.0

    @property
    def state(self) -> AircraftState:
        return AircraftState(SimState.from_vector(self._x), self.actuators.state.copy(), self._command, self._time)

    def reset(self, state: AircraftState) -> AircraftState:
        self._x = state.body.as_vector()
        self.actuators.state = state.actuators.copy()
        self._command = state.command
        self._time = state.time_s
        return self.state

    def airdata(self, wind: WindSample = CALM, x: Optional[np.ndarray] = None) -> AirData:
        x = self._x if x is None else x
        return compute_airdata(x, wind.steady_ned, wind.gust_body, wind.gust_rates)

    def wrench(self, x: np.ndarray, wind: WindSample, delta_a: float, delta_e: float, throttle: float) -> BodyWrench:
        """Total body-frame load for a packed state with the given deflections held."""
        air = self.airdata(wind, x)
        total = self.inertial.gravity_wrench(x[QUAT])
        total = total + aero_wrench(air, delta_a, delta_e, self.cfg.aero)
        total = total + propulsion_wrench(air.airspeed, throttle, self.cfg.propulsion)
        return total

    def step(self, command: ControlCommand, wind: WindSample = CALM, dt: float = 0.01) -> AircraftState:
        """
        Step the actuators, then integrate the rigid body over dt with deflections,
        throttle and wind held constant.
        """
        limit = self.actuators.max_deflection_rad
        command = replace(
            command,
            aileron=float(np.clip(command.aileron, -limit, limit)),
            elevator=float(np.clip(command.elevator, -limit, limit)),
            throttle=float(np.clip(command.throttle, 0.0, 1.0)),
        )
        self.actuators.step(command, dt)
        delta_a, delta_e = self.actuators.virtual_deflections()
        throttle = self.actuators.state.throttle

        nxt = integrate_step(self._x, lambda x: self.wrench(x, wind, delta_a, delta_e, throttle), self.inertial, dt)
        self._x = nxt
        self._command = command
        self._time += dt
        return self.state

    def speed_exceeds(self, limit: float) -> bool:
        return bool(np.linalg.norm(self._x[VEL]) > limit)

    def below_ground(self) -> bool:
        return bool(self._x[POS][2] > 0.0)
