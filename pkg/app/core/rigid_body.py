"""
Quaternion-based 6-DOF rigid-body state, kinematics, Newton-Euler dynamics and the
fixed-step RK4 integrator.

Frames: body {b} at the center of mass, NED {n} assumed inertial. Attitude is the unit
quaternion q = [eta, eps1, eps2, eps3] rotating body vectors into NED.
"""
from dataclasses import dataclass, field
from typing import Callable, Tuple
import logging
import math

import numpy as np

from app.errors import SimulationDivergedError

logger = logging.getLogger(__name__)

STATE_SIZE = 13
# Slices into the packed state vector
POS = slice(0, 3)
QUAT = slice(3, 7)
VEL = slice(7, 10)
RATES = slice(10, 13)

_GIMBAL_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SimState:
    """Rigid-body state: NED position, unit quaternion, body velocity and body rates."""
    position: np.ndarray
    attitude: np.ndarray
    velocity: np.ndarray
    angular_velocity: np.ndarray

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "SimState":
        x = np.asarray(x, dtype=float)
        return cls(x[POS].copy(), x[QUAT].copy(), x[VEL].copy(), x[RATES].copy())

    @classmethod
    def at_rest(cls) -> "SimState":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.attitude, self.velocity, self.angular_velocity])

    def euler(self) -> Tuple[float, float, float]:
        return quat_to_euler(self.attitude)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_vector())))


@dataclass(frozen=True)
class BodyWrench:
    """Force [N] and moment [N m] expressed in the body frame."""
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    moment: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __add__(self, other: "BodyWrench") -> "BodyWrench":
        return BodyWrench(self.force + other.force, self.moment + other.moment)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.force)) and np.all(np.isfinite(self.moment)))


@dataclass(frozen=True)
class InertialProperties:
    """Mass [kg], inertia tensor [kg m^2] and gravity [m/s^2]; inverse inertia precomputed."""
    mass: float
    inertia: np.ndarray
    gravity: float = 9.81
    inertia_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        inertia = np.asarray(self.inertia, dtype=float)
        if self.mass <= 0.0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T):
            raise ValueError("inertia tensor must be a symmetric 3x3 matrix")
        if np.min(np.linalg.eigvalsh(inertia)) <= 0.0:
            raise ValueError("inertia tensor must be positive definite")
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "inertia_inv", np.linalg.inv(inertia))

    def gravity_wrench(self, attitude: np.ndarray) -> BodyWrench:
        """Weight m g^n rotated into the body frame."""
        weight_ned = np.array([0.0, 0.0, self.mass * self.gravity])
        return BodyWrench(rotation_matrix(attitude).T @ weight_ned, np.zeros(3))


def skew(a: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix S(a) with S(a) b = a x b."""
    return np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])


def rotation_matrix(q: np.ndarray) -> np.ndarray:
    """R_b^n(q) = I + 2 eta S(eps) + 2 S(eps)^2."""
    eta = q[0]
    s = skew(q[1:4])
    return np.eye(3) + 2.0 * eta * s + 2.0 * (s @ s)


def quat_derivative(q: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """q_dot = 1/2 [[0, -w^T], [w, -S(w)]] q for body rates w."""
    eta = q[0]
    eps = q[1:4]
    d_eta = -0.5 * float(eps @ omega)
    d_eps = 0.5 * (eta * omega - np.cross(omega, eps))
    return np.concatenate([[d_eta], d_eps])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def euler_to_quat(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """ZYX (yaw-pitch-roll) Euler angles to a unit quaternion."""
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    return np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def quat_to_euler(q: np.ndarray) -> Tuple[float, float, float]:
    """
    Unit quaternion to ZYX Euler angles (roll, pitch, yaw).

    At gimbal lock (pitch = +-pi/2) roll is set to 0 and yaw absorbs the remainder.
    """
    eta, e1, e2, e3 = (float(c) for c in q)
    sin_pitch = 2.0 * (eta * e2 - e3 * e1)
    if abs(sin_pitch) >= 1.0 - _GIMBAL_TOLERANCE:
        pitch = math.copysign(math.pi / 2, sin_pitch)
        return 0.0, pitch, wrap_angle(2.0 * math.atan2(e3, eta))
    roll = math.atan2(2.0 * (eta * e1 + e2 * e3), 1.0 - 2.0 * (e1 * e1 + e2 * e2))
    pitch = math.asin(sin_pitch)
    yaw = math.atan2(2.0 * (eta * e3 + e1 * e2), 1.0 - 2.0 * (e2 * e2 + e3 * e3))
    return wrap_angle(roll), pitch, wrap_angle(yaw)


def state_derivative(state: np.ndarray, wrench: BodyWrench, inertial: InertialProperties) -> np.ndarray:
    """
    Time derivative of the packed rigid-body state.

    The wrench is the total body-frame load, gravity included.
    """
    if not (np.all(np.isfinite(state)) and wrench.is_finite()):
        raise SimulationDivergedError("non-finite state or wrench passed to state_derivative")

    q = state[QUAT]
    v = state[VEL]
    omega = state[RATES]
    m = inertial.mass

    p_dot = rotation_matrix(q) @ v
    q_dot = quat_derivative(q, omega)
    v_dot = (wrench.force - np.cross(omega, m * v)) / m
    omega_dot = inertial.inertia_inv @ (wrench.moment - np.cross(omega, inertial.inertia @ omega))
    return np.concatenate([p_dot, q_dot, v_dot, omega_dot])


WrenchProvider = Callable[[np.ndarray], BodyWrench]


def integrate_step(state: np.ndarray, wrench_provider: WrenchProvider,
                   inertial: InertialProperties, dt: float = 0.01) -> np.ndarray:
    """
    One classical RK4 step of the rigid body; the quaternion is renormalized afterwards.

    Raises SimulationDivergedError if any stage or the result is non-finite.
    """
    def f(x: np.ndarray) -> np.ndarray:
        return state_derivative(x, wrench_provider(x), inertial)

    k1 = f(state)
    k2 = f(state + 0.5 * dt * k1)
    k3 = f(state + 0.5 * dt * k2)
    k4 = f(state + dt * k3)
    nxt = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if not np.all(np.isfinite(nxt)):
        raise SimulationDivergedError("RK4 step produced a non-finite state")
    nxt[QUAT] = quat_normalize(nxt[QUAT])
    return nxt
