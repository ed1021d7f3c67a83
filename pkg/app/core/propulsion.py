"""
Propeller thrust along the body x-axis and the propeller reaction moment.
"""
import numpy as np

from app.core.rigid_body import BodyWrench
from app.models import PropulsionConfig


def discharge_velocity(airspeed: float, throttle: float, cfg: PropulsionConfig) -> float:
    return airspeed + throttle * (cfg.motor_constant_m_s - airspeed)


def thrust(airspeed: float, throttle: float, cfg: PropulsionConfig) -> float:
    # Negative when airspeed exceeds the motor constant (windmilling); not clamped.
    v_d = discharge_velocity(airspeed, throttle, cfg)
    return 0.5 * cfg.air_density_kg_m3 * cfg.disc_area_m2 * cfg.efficiency * v_d * (v_d - airspeed)


def propeller_moment(throttle: float, cfg: PropulsionConfig) -> float:
    return -cfg.k_q * (cfg.k_omega * throttle) ** 2


def propulsion_wrench(airspeed: float, throttle: float, cfg: PropulsionConfig) -> BodyWrench:
    """Thrust and roll reaction moment; the throttle must already be saturated to [0, 1]."""
    if not 0.0 <= throttle <= 1.0:
        raise ValueError(f"throttle must lie in [0, 1], got {throttle}")
    if airspeed < 0.0:
        raise ValueError(f"airspeed must be non-negative, got {airspeed}")
    return BodyWrench(
        np.array([thrust(airspeed, throttle, cfg), 0.0, 0.0]),
        np.array([propeller_moment(throttle, cfg), 0.0, 0.0]),
    )
