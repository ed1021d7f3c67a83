"""
Episodic attitude-control environment on top of the fixed-wing simulator.

Actions are normalized to [-1, 1]^3 (virtual aileron, virtual elevator, throttle). Raw
observations stack the last `history_length` frames oldest first; normalization is applied
outside the environment by the single owner of the running statistics.
"""
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, List, Optional, Tuple
import logging
import math

import gymnasium as gym
import numpy as np
from gymnasium import spaces

from app.core.actuators import ControlCommand
from app.core.aerodynamics import AirData
from app.core.atmosphere import AtmosphereModel, wind_setting
from app.core.rigid_body import wrap_angle
from app.core.simulator import AircraftState, FixedWingAircraft, initial_state_from_airdata
from app.errors import SimulationDivergedError
from app.models import (
    AirframeConfig, CurriculumConfig, DrydenConfig, EnvironmentConfig, ObservationConfig,
    RewardConfig, WindSetting,
)

logger = logging.getLogger(__name__)

BASE_COMPONENTS = (
    "airspeed", "roll", "pitch", "p", "q", "r",
    "roll_error", "pitch_error", "airspeed_error",
    "avg_cmd_aileron", "avg_cmd_elevator", "avg_cmd_throttle",
)


@dataclass(frozen=True)
class Targets:
    roll: float
    pitch: float
    airspeed: float

    def as_array(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.airspeed])


@dataclass(frozen=True)
class InitialConditions:
    airspeed: float
    alpha: float
    beta: float
    roll: float
    pitch: float
    yaw: float
    rates: Tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class EpisodeScenario:
    """Everything needed to replay one episode: initial conditions, targets and wind."""
    initial: InitialConditions
    targets: Targets
    wind: WindSetting = field(default_factory=WindSetting)


# ---------------------------------------------------------------- action scaling

def action_to_command(action: np.ndarray, max_deflection_rad: float) -> ControlCommand:
    a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    return ControlCommand(
        aileron=float(a[0] * max_deflection_rad),
        elevator=float(a[1] * max_deflection_rad),
        throttle=float(0.5 * (a[2] + 1.0)),
    )


def commands_to_action(command: ControlCommand, max_deflection_rad: float) -> np.ndarray:
    """Inverse of action_to_command, clipped to the action box."""
    action = np.array([
        command.aileron / max_deflection_rad,
        command.elevator / max_deflection_rad,
        2.0 * command.throttle - 1.0,
    ])
    return np.clip(action, -1.0, 1.0)


# ---------------------------------------------------------------- reward

def state_errors(roll: float, pitch: float, airspeed: float, targets: Targets) -> np.ndarray:
    return np.array([
        wrap_angle(roll - targets.roll),
        wrap_angle(pitch - targets.pitch),
        airspeed - targets.airspeed,
    ])


def command_change_penalty(commands: np.ndarray) -> float:
    """Sum of absolute consecutive command changes over the window; surfaces in rad, throttle in [0, 1]."""
    return float(np.abs(np.diff(np.asarray(commands, dtype=float), axis=0)).sum())


def reward(errors: np.ndarray, commands: np.ndarray, cfg: RewardConfig) -> float:
    """
    Negative L1 tracking cost in [-1, 0].

    errors = (roll, pitch, airspeed) errors in rad, rad, m/s; commands holds the last
    command_window + 1 physical commands, oldest first.
    """
    r_roll = min(abs(errors[0]) / cfg.roll_scale, cfg.roll_weight)
    r_pitch = min(abs(errors[1]) / cfg.pitch_scale, cfg.pitch_weight)
    r_airspeed = min(abs(errors[2]) / cfg.airspeed_scale, cfg.airspeed_weight)
    r_command = min(command_change_penalty(commands) / cfg.command_scale, cfg.command_weight)
    return -math.fsum((r_roll, r_pitch, r_airspeed, r_command))


# ---------------------------------------------------------------- observation

class ObservationBuilder:
    """Maintains the frame history and flattens it into the policy input."""

    def __init__(self, cfg: ObservationConfig):
        self.cfg = cfg
        self._frames: Deque[np.ndarray] = deque(maxlen=cfg.history_length)

    @property
    def n_components(self) -> int:
        return len(self.frame_names())

    @property
    def dim(self) -> int:
        return self.n_components * self.cfg.history_length

    def frame_names(self) -> List[str]:
        names = list(BASE_COMPONENTS)
        if self.cfg.use_target_values:
            names[6:9] = ["roll_target", "pitch_target", "airspeed_target"]
        if self.cfg.include_aero_angles:
            names += ["alpha", "beta"]
        return names

    def component_names(self) -> List[str]:
        """Index map of the flat observation (oldest step first)."""
        history = self.cfg.history_length
        return [f"{name}[t-{history - 1 - k}]" for k in range(history) for name in self.frame_names()]

    def frame(self, air: AirData, euler: Tuple[float, float, float], rates: np.ndarray,
              targets: Targets, command_average: np.ndarray) -> np.ndarray:
        roll, pitch, _ = euler
        if self.cfg.use_target_values:
            reference = targets.as_array()
        else:
            reference = state_errors(roll, pitch, air.airspeed, targets)
        values = [air.airspeed, roll, pitch, *rates, *reference, *command_average]
        if self.cfg.include_aero_angles:
            values += [air.alpha, air.beta]
        return np.asarray(values, dtype=float)

    def reset(self, frame: np.ndarray) -> np.ndarray:
        self._frames.clear()
        for _ in range(self.cfg.history_length):
            self._frames.append(frame)
        return self.observation()

    def push(self, frame: np.ndarray) -> np.ndarray:
        self._frames.append(frame)
        return self.observation()

    def observation(self) -> np.ndarray:
        return np.concatenate(self._frames)


class ObservationNormalizer:
    """Running per-component mean and variance (count, mean, M2) with clipped standardization."""

    def __init__(self, dim: int, clip: float = 10.0, epsilon: float = 1e-8):
        self.dim = dim
        self.clip = clip
        self.epsilon = epsilon
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    @property
    def var(self) -> np.ndarray:
        if self.count == 0:
            return np.ones(self.dim)
        return self.m2 / self.count

    def update(self, batch: np.ndarray) -> None:
        """Merge a batch (rows are observations) into the running statistics."""
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        n = batch.shape[0]
        if n == 0:
            return
        batch_mean = batch.mean(axis=0)
        batch_m2 = ((batch - batch_mean) ** 2).sum(axis=0)
        total = self.count + n
        delta = batch_mean - self.mean
        self.mean = self.mean + delta * n / total
        self.m2 = self.m2 + batch_m2 + delta ** 2 * self.count * n / total
        self.count = total

    def normalize(self, obs: np.ndarray, training: bool = False) -> np.ndarray:
        if training:
            self.update(obs)
        scaled = (np.asarray(obs, dtype=float) - self.mean) / np.sqrt(self.var + self.epsilon)
        return np.clip(scaled, -self.clip, self.clip)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {"count": np.array(self.count), "mean": self.mean.copy(), "m2": self.m2.copy()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        mean = np.asarray(state["mean"], dtype=float)
        if mean.shape != (self.dim,):
            raise ValueError(f"normalizer expects dim {self.dim}, got {mean.shape}")
        self.count = int(state["count"])
        self.mean = mean.copy()
        self.m2 = np.asarray(state["m2"], dtype=float).copy()

    def copy(self) -> "ObservationNormalizer":
        other = ObservationNormalizer(self.dim, self.clip, self.epsilon)
        other.load_state_dict(self.state_dict())
        return other


# ---------------------------------------------------------------- curriculum

class Curriculum:
    """Widens the episode sampling ranges once the rolling per-step reward is good enough."""

    def __init__(self, cfg: CurriculumConfig):
        self.cfg = cfg
        self.difficulty = cfg.initial_difficulty if cfg.enabled else 1.0
        self._episode_rewards: Deque[float] = deque(maxlen=cfg.window)

    def record_episode(self, total_reward: float, length: int) -> None:
        if length > 0:
            self._episode_rewards.append(total_reward / length)

    @property
    def rolling_mean(self) -> Optional[float]:
        if not self._episode_rewards:
            return None
        return float(np.mean(self._episode_rewards))

    def update(self, rolling_mean: Optional[float] = None) -> float:
        """Promote when the window is full and its mean clears the threshold; never demotes."""
        if not self.cfg.enabled or self.difficulty >= 1.0:
            return self.difficulty
        if rolling_mean is None:
            if len(self._episode_rewards) < self.cfg.window:
                return self.difficulty
            rolling_mean = self.rolling_mean
        if rolling_mean >= self.cfg.promotion_threshold:
            self.difficulty = min(1.0, round(self.difficulty + self.cfg.increment, 10))
            self._episode_rewards.clear()
            logger.info(f"Curriculum promoted to difficulty {self.difficulty:.2f} (rolling mean {rolling_mean:.4f})")
        return self.difficulty


def range_scale(difficulty: float, min_fraction: float) -> float:
    difficulty = min(1.0, max(0.0, difficulty))
    return min_fraction + (1.0 - min_fraction) * difficulty


def sample_episode(cfg: EnvironmentConfig, difficulty: float, rng: np.random.Generator,
                   wind: Optional[WindSetting] = None) -> EpisodeScenario:
    """Initial conditions and targets drawn uniformly within the difficulty-scaled ranges."""
    s = range_scale(difficulty, cfg.min_range_fraction)
    ic, tg = cfg.initial_ranges, cfg.target_ranges

    def symmetric(limit_deg: float) -> float:
        return math.radians(rng.uniform(-limit_deg * s, limit_deg * s))

    def centered(bounds: Tuple[float, float]) -> float:
        mid, half = 0.5 * (bounds[0] + bounds[1]), 0.5 * (bounds[1] - bounds[0])
        return float(rng.uniform(mid - half * s, mid + half * s))

    initial = InitialConditions(
        airspeed=centered(ic.airspeed_m_s),
        alpha=symmetric(ic.alpha_deg),
        beta=symmetric(ic.beta_deg),
        roll=symmetric(ic.roll_deg),
        pitch=symmetric(ic.pitch_deg),
        yaw=symmetric(ic.yaw_deg),
        rates=(symmetric(ic.rate_deg_s), symmetric(ic.rate_deg_s), symmetric(ic.rate_deg_s)),
    )
    targets = Targets(roll=symmetric(tg.roll_deg), pitch=symmetric(tg.pitch_deg), airspeed=centered(tg.airspeed_m_s))
    return EpisodeScenario(initial, targets, wind or WindSetting())


# ---------------------------------------------------------------- environment

class AttitudeControlEnv(gym.Env):
    """Roll, pitch and airspeed tracking for a fixed-wing aircraft."""

    metadata = {"render_modes": []}

    def __init__(self, airframe: Optional[AirframeConfig] = None, cfg: Optional[EnvironmentConfig] = None,
                 dryden: Optional[DrydenConfig] = None, difficulty: float = 1.0, record_telemetry: bool = False):
        super().__init__()
        self.airframe = airframe or AirframeConfig()
        self.cfg = cfg or EnvironmentConfig()
        self.dryden = dryden or DrydenConfig()
        self.difficulty = difficulty
        self.record_telemetry = record_telemetry

        self.aircraft = FixedWingAircraft(self.airframe)
        self.builder = ObservationBuilder(self.cfg.observation)
        self.max_deflection = self.aircraft.actuators.max_deflection_rad

        self.action_space = spaces.Box(-1.0, 1.0, shape=(3,), dtype=np.float64)
        self.observation_space = spaces.Box(-np.inf, np.inf, shape=(self.builder.dim,), dtype=np.float64)

        self.atmosphere = AtmosphereModel.calm()
        self.targets = Targets(0.0, 0.0, 18.0)
        self.scenario: Optional[EpisodeScenario] = None
        self.steps = 0
        self._commands: Deque[np.ndarray] = deque(maxlen=self.cfg.reward.command_window + 1)
        self._air: Optional[AirData] = None
        self._last_reward = 0.0

    # -- configuration hooks used by vectorized runners and the simulate command

    def set_difficulty(self, difficulty: float) -> None:
        self.difficulty = float(difficulty)

    def set_targets(self, targets: Targets) -> None:
        self.targets = targets

    # -- gymnasium API

    def reset(self, *, seed: Optional[int] = None, options: Optional[Dict[str, Any]] = None):
        super().reset(seed=seed)
        options = options or {}
        scenario = options.get("scenario")
        if scenario is None:
            wind_seed = int(self.np_random.integers(0, 2 ** 63 - 1))
            wind = wind_setting(self.cfg.wind_severity, self.dryden, wind_seed)
            scenario = sample_episode(self.cfg, self.difficulty, self.np_random, wind)
        self.scenario = scenario
        self.targets = scenario.targets
        self.atmosphere = AtmosphereModel(scenario.wind)

        ic = scenario.initial
        state = initial_state_from_airdata(
            ic.airspeed, ic.alpha, ic.beta, ic.roll, ic.pitch, ic.yaw, ic.rates,
            self.atmosphere.steady_ned, self.cfg.initial_altitude_m, self.cfg.initial_throttle)
        self.aircraft.reset(state)
        self.steps = 0
        self._last_reward = 0.0

        initial_command = state.command.as_array()
        self._commands.clear()
        for _ in range(self._commands.maxlen):
            self._commands.append(initial_command)

        self._air = self.aircraft.airdata(self.atmosphere.steady_sample())
        obs = self.builder.reset(self._frame(state))
        return obs, self._info(state)

    def step(self, action):
        action = np.asarray(action, dtype=float)
        state = self.aircraft.state
        if action.shape != (3,) or not np.all(np.isfinite(action)):
            logger.warning("Non-finite or malformed action, terminating episode")
            self.steps += 1
            self._last_reward = -1.0
            return self.builder.observation(), -1.0, True, False, self._info(state, failure=True)

        command = action_to_command(action, self.max_deflection)
        wind = self.atmosphere.sample(self._air.airspeed, self.cfg.step_dt_s)
        try:
            state = self.aircraft.step(command, wind, self.cfg.step_dt_s)
            self._air = self.aircraft.airdata(wind)
        except SimulationDivergedError as e:
            logger.warning(f"Simulation diverged at step {self.steps}: {str(e)}")
            self.steps += 1
            self._last_reward = -1.0
            return self.builder.observation(), -1.0, True, False, self._info(state, failure=True, diverged=True)
        self.steps += 1
        self._commands.append(command.as_array())

        roll, pitch, _ = state.euler()
        errors = state_errors(roll, pitch, self._air.airspeed, self.targets)
        step_reward = reward(errors, np.array(self._commands), self.cfg.reward)
        self._last_reward = step_reward

        diverged = (self.aircraft.speed_exceeds(self.cfg.divergence_speed_m_s)
                    or self.aircraft.below_ground())
        terminated = bool(diverged)
        truncated = (not terminated) and self.steps >= self.cfg.max_steps
        obs = self.builder.push(self._frame(state))
        return obs, step_reward, terminated, truncated, self._info(state, failure=diverged, diverged=diverged)

    # -- helpers

    def measurements(self) -> Dict[str, float]:
        """Feedback signals available to a classical autopilot."""
        state = self.aircraft.state
        roll, pitch, yaw = state.euler()
        p, q, r = state.body.angular_velocity
        return {"roll": roll, "pitch": pitch, "yaw": yaw, "airspeed": self._air.airspeed,
                "p": float(p), "q": float(q), "r": float(r)}

    def command_average(self) -> np.ndarray:
        window = self.cfg.observation.command_average_window
        recent = list(self._commands)[-window:]
        return np.mean(recent, axis=0)

    def _frame(self, state: AircraftState) -> np.ndarray:
        return self.builder.frame(self._air, state.euler(), state.body.angular_velocity,
                                  self.targets, self.command_average())

    def _info(self, state: AircraftState, failure: bool = False, diverged: bool = False) -> Dict[str, Any]:
        info: Dict[str, Any] = {"failure": failure, "diverged": diverged, "difficulty": self.difficulty}
        if self.record_telemetry:
            info["telemetry"] = self.telemetry(state)
        return info

    def telemetry(self, state: Optional[AircraftState] = None) -> Dict[str, float]:
        """One trace row of the current step."""
        state = state or self.aircraft.state
        roll, pitch, yaw = state.euler()
        p, q, r = state.body.angular_velocity
        north, east, down = state.body.position
        da, de = state.virtual_deflections()
        air = self._air
        return {
            "time_s": self.steps * self.cfg.step_dt_s,
            "north_m": float(north), "east_m": float(east), "altitude_m": float(-down),
            "roll_rad": roll, "pitch_rad": pitch, "yaw_rad": yaw,
            "p_rad_s": float(p), "q_rad_s": float(q), "r_rad_s": float(r),
            "airspeed_m_s": air.airspeed, "alpha_rad": air.alpha, "beta_rad": air.beta,
            "cmd_aileron_rad": state.command.aileron, "cmd_elevator_rad": state.command.elevator,
            "cmd_throttle": state.command.throttle,
            "aileron_rad": da, "elevator_rad": de, "throttle": state.actuators.throttle,
            "reward": self._last_reward,
            "target_roll_rad": self.targets.roll, "target_pitch_rad": self.targets.pitch,
            "target_airspeed_m_s": self.targets.airspeed,
        }

