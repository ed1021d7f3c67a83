"""
Air-relative velocities and aerodynamic loads.

Lift, drag and pitch moment blend a linear small-angle model with Newtonian flat-plate
expressions as the angle of attack grows; side force, roll and yaw moments are linear.
"""
from dataclasses import dataclass
from typing import NamedTuple
import logging
import math

import numpy as np
from scipy.special import expit

from app.core.rigid_body import BodyWrench, QUAT, RATES, VEL, rotation_matrix
from app.models import AeroCoefficientSet

logger = logging.getLogger(__name__)

AIRSPEED_FLOOR = 0.1  # m/s


@dataclass(frozen=True)
class AirData:
    airspeed: float
    alpha: float
    beta: float
    v_rel: np.ndarray
    omega_rel: np.ndarray
    low_airspeed: bool = False


class AeroCoefficients(NamedTuple):
    drag: float
    side: float
    lift: float
    roll: float
    pitch: float
    yaw: float


def compute_airdata(state: np.ndarray, steady_wind: np.ndarray, gust: np.ndarray,
                    gust_rates: np.ndarray) -> AirData:
    """
    Relative velocities from the packed rigid-body state and the wind sample.

    steady_wind is NED, gust and gust_rates are body frame.
    """
    q = state[QUAT]
    v_rel = state[VEL] - rotation_matrix(q).T @ steady_wind - gust
    omega_rel = state[RATES] - gust_rates
    airspeed = float(np.linalg.norm(v_rel))
    if airspeed < AIRSPEED_FLOOR:
        return AirData(airspeed, 0.0, 0.0, v_rel, omega_rel, low_airspeed=True)
    alpha = math.atan2(v_rel[2], v_rel[0])
    beta = math.asin(max(-1.0, min(1.0, v_rel[1] / airspeed)))
    return AirData(airspeed, alpha, beta, v_rel, omega_rel)


def blending_sigma(alpha: float, steepness: float, cutoff: float) -> float:
    """
    sigma = (1 + e^{-M(a-a0)} + e^{M(a+a0)}) / ((1 + e^{-M(a-a0)})(1 + e^{M(a+a0)})),
    evaluated as a + b - ab with logistic terms so it cannot overflow.
    """
    a = expit(-steepness * (alpha + cutoff))
    b = expit(steepness * (alpha - cutoff))
    return float(a + b - a * b)


def wind_to_body(alpha: float, beta: float) -> np.ndarray:
    """Rotation taking [-D, Y, -L] from the wind frame to the body frame."""
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    return np.array([
        [ca * cb, -ca * sb, -sa],
        [sb, cb, 0.0],
        [sa * cb, -sa * sb, ca],
    ])


def aero_coefficients(air: AirData, delta_a: float, delta_e: float,
                      coeffs: AeroCoefficientSet) -> AeroCoefficients:
    alpha, beta = air.alpha, air.beta
    if air.low_airspeed:
        p_hat = q_hat = r_hat = 0.0
    else:
        p, q, r = air.omega_rel
        p_hat = coeffs.wingspan_m * p / (2.0 * air.airspeed)
        q_hat = coeffs.chord_m * q / (2.0 * air.airspeed)
        r_hat = coeffs.wingspan_m * r / (2.0 * air.airspeed)

    d, l, m = coeffs.drag, coeffs.lift, coeffs.pitch
    drag_lin = (d.c0 + d.alpha * alpha + d.alpha2 * alpha ** 2 + d.beta * beta + d.beta2 * beta ** 2
                + d.q * q_hat + d.delta_e * delta_e + d.delta_e2 * delta_e ** 2)
    lift_lin = l.c0 + l.alpha * alpha + l.q * q_hat + l.delta_e * delta_e
    pitch_lin = m.c0 + m.alpha * alpha + m.q * q_hat + m.delta_e * delta_e

    sign = math.copysign(1.0, alpha) if alpha != 0.0 else 0.0
    sin2 = math.sin(alpha) ** 2
    drag_fp = 2.0 * sin2
    lift_fp = 2.0 * sign * sin2 * math.cos(alpha)
    pitch_fp = coeffs.blending.pitch_flat_plate_gain * sign * sin2

    sigma = blending_sigma(alpha, coeffs.blending.steepness, coeffs.blending.cutoff_rad)

    def lateral(c) -> float:
        return c.c0 + c.beta * beta + c.p * p_hat + c.r * r_hat + c.delta_a * delta_a

    return AeroCoefficients(
        drag=(1.0 - sigma) * drag_lin + sigma * drag_fp,
        side=lateral(coeffs.side),
        lift=(1.0 - sigma) * lift_lin + sigma * lift_fp,
        roll=lateral(coeffs.roll),
        pitch=(1.0 - sigma) * pitch_lin + sigma * pitch_fp,
        yaw=lateral(coeffs.yaw),
    )


def aero_wrench(air: AirData, delta_a: float, delta_e: float, coeffs: AeroCoefficientSet) -> BodyWrench:
    """Aerodynamic force and moment in the body frame; zero below the airspeed floor."""
    if air.low_airspeed:
        return BodyWrench(np.zeros(3), np.zeros(3))
    c = aero_coefficients(air, delta_a, delta_e, coeffs)
    qbar_s = 0.5 * coeffs.air_density_kg_m3 * air.airspeed ** 2 * coeffs.wing_area_m2
    force = wind_to_body(air.alpha, air.beta) @ np.array([-c.drag, c.side, -c.lift]) * qbar_s
    moment = qbar_s * np.array([
        coeffs.wingspan_m * c.roll,
        coeffs.chord_m * c.pitch,
        coeffs.wingspan_m * c.yaw,
    ])
    return BodyWrench(force, moment)


def validate_drag_positive(coeffs: AeroCoefficientSet, samples: int = 721) -> None:
    """Raise ValueError if the blended drag coefficient is not positive over alpha in [-pi/2, pi/2]."""
    for alpha in np.linspace(-math.pi / 2, math.pi / 2, samples):
        air = AirData(1.0, float(alpha), 0.0, np.zeros(3), np.zeros(3))
        drag = aero_coefficients(air, 0.0, 0.0, coeffs).drag
        if drag <= 0.0:
            raise ValueError(f"drag coefficient {drag:.4g} is not positive at alpha={alpha:.3f} rad")
