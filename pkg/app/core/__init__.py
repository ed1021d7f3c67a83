"""
Flight simulation core: rigid-body dynamics, aerodynamics, propulsion, actuators and wind.

`FixedWingAircraft` composes the pieces; the other modules stay usable on their own.
"""
from app.core.actuators import ActuatorModel, ActuatorState, ControlCommand
from app.core.atmosphere import AtmosphereModel, DrydenTurbulence, WindSample, wind_setting
from app.core.rigid_body import SimState, euler_to_quat, quat_to_euler
from app.core.simulator import AircraftState, FixedWingAircraft, initial_state_from_airdata

__all__ = [
    "ActuatorModel",
    "ActuatorState",
    "AircraftState",
    "AtmosphereModel",
    "ControlCommand",
    "DrydenTurbulence",
    "FixedWingAircraft",
    "SimState",
    "WindSample",
    "euler_to_quat",
    "initial_state_from_airdata",
    "quat_to_euler",
    "wind_setting",
]
