"""
Steady wind plus Dryden turbulence (linear and angular gusts).

The Dryden shaping filters follow the MIL-F-8785C low-altitude forms. All six gust
components share one 8-state linear system driven by white noise; it is discretized
exactly (Van Loan) for the current transport airspeed, so the sampled process keeps the
configured stationary variance at any step size.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple
import logging
import math

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

from app.core.aerodynamics import AIRSPEED_FLOOR
from app.models import DrydenConfig, TurbulenceSeverity, WindSetting

logger = logging.getLogger(__name__)

FT_PER_M = 3.281
_N_STATES = 8
_N_NOISE = 4
# continuous white-noise intensity that makes the Dryden gains yield variance sigma^2
_NOISE_INTENSITY = math.pi


def dryden_parameters(altitude_m: float, steady_wind_m_s: float) -> Tuple[Tuple[float, float, float], Tuple[float, float, float]]:
    """
    Low-altitude scale lengths (L_u, L_v, L_w) [m] and intensities (sigma_u, sigma_v, sigma_w) [m/s].

    The 20 ft wind speed is taken to be the steady wind magnitude of the severity preset.
    """
    h_ft = altitude_m * FT_PER_M
    factor = 0.177 + 0.000823 * h_ft
    l_w = h_ft / FT_PER_M
    l_uv = h_ft / factor ** 1.2 / FT_PER_M
    sigma_w = 0.1 * steady_wind_m_s
    sigma_uv = sigma_w / factor ** 0.4
    return (l_uv, l_uv, l_w), (sigma_uv, sigma_uv, sigma_w)


def wind_setting(severity: TurbulenceSeverity, cfg: Optional[DrydenConfig] = None, seed: int = 0) -> WindSetting:
    """Build the wind setting of a severity preset."""
    cfg = cfg or DrydenConfig()
    magnitude = cfg.steady_wind_m_s[severity]
    lengths, sigmas = dryden_parameters(cfg.altitude_m, magnitude)
    if cfg.scale_lengths_m is not None:
        lengths = cfg.scale_lengths_m
    if cfg.intensities_m_s is not None and severity in cfg.intensities_m_s:
        sigmas = cfg.intensities_m_s[severity]
    if severity == TurbulenceSeverity.NONE:
        sigmas = (0.0, 0.0, 0.0)
    return WindSetting(
        severity=severity,
        steady_magnitude_m_s=magnitude,
        scale_lengths_m=tuple(lengths),
        intensities_m_s=tuple(sigmas),
        elevation_limit_deg=cfg.elevation_limit_deg,
        nominal_airspeed_m_s=cfg.nominal_airspeed_m_s,
        airspeed_resolution_m_s=cfg.airspeed_resolution_m_s,
        wingspan_m=cfg.wingspan_m,
        seed=seed,
    )


def steady_wind(setting: WindSetting, rng: np.random.Generator) -> np.ndarray:
    """Steady NED wind of the configured magnitude: azimuth uniform, elevation uniform within the limit."""
    if setting.steady_magnitude_m_s == 0.0:
        return np.zeros(3)
    azimuth = rng.uniform(-math.pi, math.pi)
    limit = math.radians(setting.elevation_limit_deg)
    elevation = rng.uniform(-limit, limit)
    direction = np.array([
        math.cos(elevation) * math.cos(azimuth),
        math.cos(elevation) * math.sin(azimuth),
        -math.sin(elevation),
    ])
    return setting.steady_magnitude_m_s * direction


def dryden_state_space(airspeed: float, lengths: Tuple[float, float, float],
                       sigmas: Tuple[float, float, float], wingspan: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Continuous (A, B, C) of the combined filter.

    States: [u, v1, v2, w1, w2, p, q-lag, r-lag]; noise: [n_u, n_v, n_w, n_p];
    outputs: [u_g, v_g, w_g, p_w, q_w, r_w].
    """
    l_u, l_v, l_w = lengths
    s_u, s_v, s_w = sigmas
    V = airspeed

    tau_u, tau_v, tau_w = l_u / V, l_v / V, l_w / V
    k_u = s_u * math.sqrt(2.0 * l_u / (math.pi * V))
    k_v = s_v * math.sqrt(l_v / (math.pi * V))
    k_w = s_w * math.sqrt(l_w / (math.pi * V))
    tau_p = 4.0 * wingspan / (math.pi * V)
    tau_q = 4.0 * wingspan / (math.pi * V)
    tau_r = 3.0 * wingspan / (math.pi * V)
    k_p = s_w * math.sqrt(0.8 / V) * (math.pi / (4.0 * wingspan)) ** (1.0 / 6.0) / l_w ** (1.0 / 3.0)

    A = np.zeros((_N_STATES, _N_STATES))
    B = np.zeros((_N_STATES, _N_NOISE))
    C = np.zeros((6, _N_STATES))

    A[0, 0] = -1.0 / tau_u
    B[0, 0] = 1.0
    C[0, 0] = k_u / tau_u

    # second-order v and w filters in controllable form
    for row, tau, k, noise, out in ((1, tau_v, k_v, 1, 1), (3, tau_w, k_w, 2, 2)):
        A[row, row + 1] = 1.0
        A[row + 1, row] = -1.0 / tau ** 2
        A[row + 1, row + 1] = -2.0 / tau
        B[row + 1, noise] = 1.0
        C[out, row] = k / tau ** 2
        C[out, row + 1] = k * math.sqrt(3.0) / tau

    A[5, 5] = -1.0 / tau_p
    B[5, 3] = 1.0
    C[3, 5] = k_p / tau_p

    # q_w = (s/V)/(1 + tau_q s) w_g and r_w = -(s/V)/(1 + tau_r s) v_g through lag states
    c_w, c_v = C[2], C[1]
    A[6] = c_w / tau_q
    A[6, 6] -= 1.0 / tau_q
    C[4] = c_w / (V * tau_q)
    C[4, 6] -= 1.0 / (V * tau_q)
    A[7] = c_v / tau_r
    A[7, 7] -= 1.0 / tau_r
    C[5] = -c_v / (V * tau_r)
    C[5, 7] += 1.0 / (V * tau_r)
    return A, B, C


@lru_cache(maxsize=4096)
def _discrete_filter(airspeed: float, dt: float, lengths: Tuple[float, float, float],
                     sigmas: Tuple[float, float, float], wingspan: float):
    A, B, C = dryden_state_space(airspeed, lengths, sigmas, wingspan)
    G = _NOISE_INTENSITY * (B @ B.T)
    n = _N_STATES
    van_loan = np.zeros((2 * n, 2 * n))
    van_loan[:n, :n] = -A
    van_loan[:n, n:] = G
    van_loan[n:, n:] = A.T
    E = expm(van_loan * dt)
    phi = E[n:, n:].T
    qd = phi @ E[:n, n:]
    qd = 0.5 * (qd + qd.T)
    eigvals, eigvecs = np.linalg.eigh(qd)
    noise_gain = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
    stationary = solve_continuous_lyapunov(A, -G)
    stationary = 0.5 * (stationary + stationary.T)
    return phi, noise_gain, C, stationary


@dataclass(frozen=True)
class WindSample:
    steady_ned: np.ndarray
    gust_body: np.ndarray
    gust_rates: np.ndarray


class DrydenTurbulence:
    """Per-episode Dryden filter state with its own random stream."""

    def __init__(self, setting: WindSetting, rng: Optional[np.random.Generator] = None):
        self.setting = setting
        self.rng = rng if rng is not None else np.random.default_rng(setting.seed)
        self.enabled = any(s > 0.0 for s in setting.intensities_m_s)
        self._state: Optional[np.ndarray] = None

    def transport_speed(self, airspeed: float) -> float:
        if not math.isfinite(airspeed) or airspeed < AIRSPEED_FLOOR:
            airspeed = self.setting.nominal_airspeed_m_s
        resolution = self.setting.airspeed_resolution_m_s
        return max(resolution, round(airspeed / resolution) * resolution)

    def sample(self, airspeed: float, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        """Advance one step; returns (gust velocity m/s body, gust angular rate rad/s body)."""
        if not self.enabled:
            return np.zeros(3), np.zeros(3)
        phi, noise_gain, C, stationary = _discrete_filter(
            self.transport_speed(airspeed), float(dt), tuple(self.setting.scale_lengths_m),
            tuple(self.setting.intensities_m_s), self.setting.wingspan_m)
        if self._state is None:
            # start from the stationary distribution
            self._state = self.rng.multivariate_normal(np.zeros(_N_STATES), stationary, method="eigh")
        self._state = phi @ self._state + noise_gain @ self.rng.standard_normal(_N_STATES)
        out = C @ self._state
        return out[:3].copy(), out[3:].copy()


class AtmosphereModel:
    """Steady wind drawn once per episode plus the turbulence process."""

    def __init__(self, setting: WindSetting):
        self.setting = setting
        self.rng = np.random.default_rng(setting.seed)
        self.steady_ned = steady_wind(setting, self.rng)
        self.turbulence = DrydenTurbulence(setting, self.rng)
        if setting.severity != TurbulenceSeverity.NONE:
            logger.debug(f"Wind {setting.severity.value}: steady {self.steady_ned.round(2).tolist()} m/s NED")

    def sample(self, airspeed: float, dt: float) -> WindSample:
        gust, rates = self.turbulence.sample(airspeed, dt)
        return WindSample(self.steady_ned, gust, rates)

    def steady_sample(self) -> WindSample:
        """Steady wind only; used before the first turbulence step."""
        return WindSample(self.steady_ned, np.zeros(3), np.zeros(3))

    @staticmethod
    def calm() -> "AtmosphereModel":
        return AtmosphereModel(WindSetting())
