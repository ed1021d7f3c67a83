"""
Scenario batteries, step-response metrics and controller comparison reports.

A state counts as a success when its error stays within bounds for the final dwell of
the episode; rise time, settling time, overshoot and control variation are only reported
for successful episodes.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
import pandas as pd

from app.core.atmosphere import wind_setting
from app.errors import ConfigError
from app.models import (
    AggregateRow, AirframeConfig, EvaluationConfig, MetricReport, PidGains, StateMetrics,
    SuccessBounds, TurbulenceSeverity,
)
from app.services.environment import (
    AttitudeControlEnv, EpisodeScenario, InitialConditions, Targets, sample_episode,
)
from app.services.neuralnet import PolicyParameters
from app.services.pid_baseline import PidController
from app.utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

STATES = ("roll", "pitch", "airspeed")
_DEGENERATE_ERROR = 1e-9
SCHEDULE_COLUMNS = ("time_s", "roll_deg", "pitch_deg", "airspeed_m_s")


# ---------------------------------------------------------------- traces and metrics

def _wrap(angles) -> np.ndarray:
    return np.remainder(np.asarray(angles, dtype=float) + np.pi, 2.0 * np.pi) - np.pi


@dataclass
class EpisodeRecord:
    """Per-step errors and physical commands of one episode, sampled every dt seconds."""
    errors: Dict[str, np.ndarray]
    commands: np.ndarray
    dt: float = 0.01
    diverged: bool = False
    trace: Optional[pd.DataFrame] = None

    @classmethod
    def from_trace(cls, trace: pd.DataFrame, dt: float, diverged: bool = False) -> "EpisodeRecord":
        errors = {
            "roll": _wrap(trace["roll_rad"].to_numpy() - trace["target_roll_rad"].to_numpy()),
            "pitch": _wrap(trace["pitch_rad"].to_numpy() - trace["target_pitch_rad"].to_numpy()),
            "airspeed": trace["airspeed_m_s"].to_numpy() - trace["target_airspeed_m_s"].to_numpy(),
        }
        commands = trace[["cmd_aileron_rad", "cmd_elevator_rad", "cmd_throttle"]].to_numpy()
        return cls(errors, commands, dt, diverged, trace)


def _state_bound(state: str, bounds: SuccessBounds) -> float:
    if state == "roll":
        return math.radians(bounds.roll_deg)
    if state == "pitch":
        return math.radians(bounds.pitch_deg)
    return bounds.airspeed_m_s


def final_dwell_start(errors: np.ndarray, bound: float) -> Optional[int]:
    """Index where the trailing in-bound run starts, or None if the last sample is out of bounds."""
    inside = np.abs(errors) <= bound
    if inside.size == 0 or not inside[-1]:
        return None
    outside = np.flatnonzero(~inside)
    return int(outside[-1] + 1) if outside.size else 0


def _first_crossing(magnitude: np.ndarray, threshold: float, start: int = 0) -> Optional[float]:
    """Fractional sample index where |e| first drops to threshold at or after start."""
    hits = np.flatnonzero(magnitude[start:] <= threshold)
    if hits.size == 0:
        return None
    k = int(hits[0]) + start
    if k == 0:
        return 0.0
    before, after = magnitude[k - 1], magnitude[k]
    if before == after:
        return float(k)
    return (k - 1) + (before - threshold) / (before - after)


def rise_time(errors: np.ndarray, dt: float) -> Tuple[Optional[float], bool]:
    """
    Time from the 90 % to the 10 % initial-error crossing, linearly interpolated.

    Returns (rise time, degenerate); a zero initial error gives (0, True).
    """
    magnitude = np.abs(errors)
    e0 = magnitude[0]
    if e0 <= _DEGENERATE_ERROR:
        return 0.0, True
    t90 = _first_crossing(magnitude, 0.9 * e0)
    if t90 is None:
        return None, False
    t10 = _first_crossing(magnitude, 0.1 * e0, start=int(math.floor(t90)))
    if t10 is None:
        return None, False
    return (t10 - t90) * dt, False


def overshoot_pct(errors: np.ndarray) -> float:
    """Peak error on the opposite side of the setpoint, as a percentage of the initial error."""
    e0 = errors[0]
    if abs(e0) <= _DEGENERATE_ERROR:
        return 0.0
    opposite = -math.copysign(1.0, e0) * errors
    return float(max(0.0, opposite.max()) / abs(e0) * 100.0)


def control_variation(commands: np.ndarray, dt: float) -> float:
    """Mean absolute command change per second, averaged over steps and actuators."""
    commands = np.asarray(commands, dtype=float)
    if commands.shape[0] < 2:
        return 0.0
    return float(np.abs(np.diff(commands, axis=0)).mean() / dt)


def compute_metrics(record: EpisodeRecord, bounds: SuccessBounds) -> MetricReport:
    """
    Success flags and step-response metrics of one episode.

    A state that starts inside its success bound gets a degenerate rise time of 0. A
    successful state whose error settles between 10 % of the initial error and the bound
    never completes a rise, keeps rise_time_s None and is left out of the rise-time means.
    """
    per_state: Dict[str, Dict[str, Any]] = {}
    for state in STATES:
        errors = record.errors[state]
        start = final_dwell_start(errors, _state_bound(state, bounds))
        success = (not record.diverged and start is not None and errors.size - start >= bounds.dwell_steps)
        per_state[state] = {"success": success, "dwell_start": start}
    overall = all(v["success"] for v in per_state.values())

    reports = {}
    for state in STATES:
        errors = record.errors[state]
        if overall:
            rise, degenerate = rise_time(errors, record.dt)
            if rise is None and abs(errors[0]) <= _state_bound(state, bounds):
                rise, degenerate = 0.0, True
            reports[state] = StateMetrics(
                success=True,
                rise_time_s=rise,
                rise_time_degenerate=degenerate,
                settling_time_s=per_state[state]["dwell_start"] * record.dt,
                overshoot_pct=overshoot_pct(errors),
            )
        else:
            reports[state] = StateMetrics(success=per_state[state]["success"])
    return MetricReport(
        **reports,
        success=overall,
        diverged=record.diverged,
        control_variation_per_s=control_variation(record.commands, record.dt) if overall else None,
    )


# ---------------------------------------------------------------- scenarios

def _deviate(rng: np.random.Generator, value: float, band: Tuple[float, float], low: float, high: float) -> float:
    """value +- U(band) with a random sign, flipped if it leaves [low, high], then clamped."""
    magnitude = rng.uniform(*band)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    target = value + sign * magnitude
    if not low <= target <= high:
        target = value - sign * magnitude
    return float(min(high, max(low, target)))


def build_scenarios(cfg: EvaluationConfig, severity: TurbulenceSeverity, seed: int,
                    episodes: Optional[int] = None) -> List[EpisodeScenario]:
    """
    Seeded scenario set for one wind setting.

    Initial conditions depend only on (seed, episode), so every setting and controller
    sees the same starting states; wind orientation and gusts are redrawn per episode.
    """
    episodes = cfg.episodes_per_setting if episodes is None else episodes
    severity_index = list(TurbulenceSeverity).index(severity)
    tg = cfg.environment.target_ranges
    scenarios = []
    for i in range(episodes):
        rng = make_rng(seed, "init", i)
        base = sample_episode(cfg.environment, 1.0, rng)
        ic = base.initial
        targets = Targets(
            roll=math.radians(_deviate(rng, math.degrees(ic.roll), cfg.angle_deviation_deg, -tg.roll_deg, tg.roll_deg)),
            pitch=math.radians(_deviate(rng, math.degrees(ic.pitch), cfg.angle_deviation_deg, -tg.pitch_deg, tg.pitch_deg)),
            airspeed=_deviate(rng, ic.airspeed, cfg.airspeed_deviation_m_s, *tg.airspeed_m_s),
        )
        wind = wind_setting(severity, cfg.dryden, derive_seed(seed, "wind", severity_index, i))
        scenarios.append(EpisodeScenario(ic, targets, wind))
    return scenarios


# ---------------------------------------------------------------- controllers

class PolicyController:
    """Mean action of a trained policy with its normalizer frozen."""

    name = "rl"

    def __init__(self, policy: PolicyParameters):
        self.policy = policy

    def reset(self) -> None:
        """No-op: the policy and its frozen normalizer carry no state between episodes."""

    def act(self, raw_obs: np.ndarray, env) -> np.ndarray:
        return self.policy.act(raw_obs)


@dataclass
class ControllerSpec:
    """Picklable recipe for building a controller inside a worker process."""
    kind: str
    gains: PidGains = field(default_factory=PidGains)
    policy: Optional[PolicyParameters] = None

    def build(self, env: AttitudeControlEnv):
        if self.kind == "pid":
            return PidController(self.gains, env.cfg.step_dt_s, env.max_deflection)
        if self.kind == "rl":
            if self.policy is None:
                raise ValueError("the rl controller needs a policy")
            return PolicyController(self.policy)
        raise ValueError(f"unknown controller: {self.kind}")


# ---------------------------------------------------------------- episodes and batteries

def make_eval_env(airframe: AirframeConfig, cfg: EvaluationConfig, horizon: Optional[int] = None) -> AttitudeControlEnv:
    env_cfg = cfg.environment.model_copy(update={"max_steps": horizon or cfg.horizon_steps})
    return AttitudeControlEnv(airframe, env_cfg, cfg.dryden, difficulty=1.0, record_telemetry=True)


def run_episode(env: AttitudeControlEnv, controller, scenario: EpisodeScenario, seed: int = 0) -> EpisodeRecord:
    obs, _ = env.reset(seed=seed, options={"scenario": scenario})
    controller.reset()
    rows = [env.telemetry()]
    failure = False
    while True:
        obs, _, terminated, truncated, info = env.step(controller.act(obs, env))
        rows.append(info["telemetry"])
        if terminated or truncated:
            failure = bool(info.get("failure", False))
            break
    return EpisodeRecord.from_trace(pd.DataFrame(rows), env.cfg.step_dt_s, diverged=failure)


def _report_row(severity: TurbulenceSeverity, controller: str, episode: int, report: MetricReport) -> Dict[str, Any]:
    row: Dict[str, Any] = {"setting": severity.value, "controller": controller, "episode": episode,
                           "success": report.success, "diverged": report.diverged,
                           "control_variation_per_s": report.control_variation_per_s}
    for state, metrics in report.states().items():
        row[f"success_{state}"] = metrics.success
        row[f"rise_time_{state}_s"] = metrics.rise_time_s
        row[f"rise_time_{state}_degenerate"] = metrics.rise_time_degenerate
        row[f"settling_time_{state}_s"] = metrics.settling_time_s
        row[f"overshoot_{state}_pct"] = metrics.overshoot_pct
    return row


def _run_chunk(args) -> List[Dict[str, Any]]:
    spec, airframe, cfg, severity, indices, scenarios, seed, traces_dir = args
    env = make_eval_env(airframe, cfg)
    controller = spec.build(env)
    rows = []
    for index, scenario in zip(indices, scenarios):
        record = run_episode(env, controller, scenario, seed=derive_seed(seed, "env", index))
        report = compute_metrics(record, cfg.bounds)
        rows.append(_report_row(severity, spec.kind, index, report))
        if traces_dir is not None:
            path = Path(traces_dir) / f"{spec.kind}_{severity.value}_{index:04d}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            record.trace.to_csv(path, index=False, float_format="%.10g")
    env.close()
    return rows


@dataclass
class BatteryResult:
    episodes: pd.DataFrame
    aggregate: List[AggregateRow]

    def aggregate_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump(mode="json") for row in self.aggregate])


def _mean_or_none(values: pd.Series) -> Optional[float]:
    values = values.dropna()
    return float(values.mean()) if len(values) else None


def aggregate(episodes: pd.DataFrame, severity: TurbulenceSeverity, controller: str) -> AggregateRow:
    n = len(episodes)
    pct = lambda column: float(100.0 * episodes[column].astype(bool).mean()) if n else 0.0
    fields = {}
    for state in STATES:
        fields[f"rise_time_{state}_s"] = _mean_or_none(episodes[f"rise_time_{state}_s"])
        fields[f"settling_time_{state}_s"] = _mean_or_none(episodes[f"settling_time_{state}_s"])
        fields[f"overshoot_{state}_pct"] = _mean_or_none(episodes[f"overshoot_{state}_pct"])
    return AggregateRow(
        setting=severity,
        controller=controller,
        episodes=n,
        success_roll_pct=pct("success_roll"),
        success_pitch_pct=pct("success_pitch"),
        success_airspeed_pct=pct("success_airspeed"),
        success_all_pct=pct("success"),
        control_variation_per_s=_mean_or_none(episodes["control_variation_per_s"]),
        **fields,
    )


def run_battery(spec: ControllerSpec, cfg: EvaluationConfig, airframe: AirframeConfig,
                settings: Optional[Sequence[TurbulenceSeverity]] = None, seed: int = 0,
                workers: int = 1, episodes: Optional[int] = None,
                traces_dir: Optional[Union[str, Path]] = None) -> BatteryResult:
    """
    Run the controller over the scenario set of every requested wind setting.

    Episodes may run in a process pool; rows are merged back in scenario order.
    """
    settings = list(settings or cfg.settings)
    all_rows: List[Dict[str, Any]] = []
    aggregates: List[AggregateRow] = []
    for severity in settings:
        scenarios = build_scenarios(cfg, severity, seed, episodes)
        indices = list(range(len(scenarios)))
        n_chunks = max(1, min(workers, len(scenarios)))
        chunks = [(spec, airframe, cfg, severity, indices[k::n_chunks], scenarios[k::n_chunks], seed, traces_dir)
                  for k in range(n_chunks)]
        if n_chunks == 1:
            rows = _run_chunk(chunks[0])
        else:
            with ProcessPoolExecutor(max_workers=n_chunks) as pool:
                rows = [row for chunk_rows in pool.map(_run_chunk, chunks) for row in chunk_rows]
        rows.sort(key=lambda row: row["episode"])
        frame = pd.DataFrame(rows)
        summary = aggregate(frame, severity, spec.kind)
        logger.info(f"{spec.kind} / {severity.value}: {summary.success_all_pct:.1f}% success over {summary.episodes} episodes")
        all_rows.extend(rows)
        aggregates.append(summary)
    return BatteryResult(pd.DataFrame(all_rows), aggregates)


def paired_comparison(first: BatteryResult, second: BatteryResult) -> pd.DataFrame:
    """Per-scenario rows of two controllers evaluated on identical seeds."""
    a = first.episodes.set_index(["setting", "episode"])
    b = second.episodes.set_index(["setting", "episode"])
    name_a = a["controller"].iloc[0] if len(a) else "a"
    name_b = b["controller"].iloc[0] if len(b) else "b"
    if name_a == name_b:
        name_b = f"{name_b}_2"
    merged = a.drop(columns="controller").join(
        b.drop(columns="controller"), lsuffix=f"_{name_a}", rsuffix=f"_{name_b}", how="inner")
    return merged.reset_index()


# ---------------------------------------------------------------- continuous tracking

def load_schedule(path: Union[str, Path], cfg: Optional[EvaluationConfig] = None) -> pd.DataFrame:
    """Setpoint schedule sorted by time; rows outside the target bounds are kept with a warning."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("schedule file not found", path)
    try:
        schedule = pd.read_csv(path, comment="#")
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise ConfigError(f"cannot read schedule: {str(e)}", path) from e
    missing = [c for c in SCHEDULE_COLUMNS if c not in schedule.columns]
    if missing:
        raise ConfigError(f"schedule is missing columns {missing}", path)
    schedule = schedule[list(SCHEDULE_COLUMNS)].astype(float).sort_values("time_s", kind="stable").reset_index(drop=True)

    tg = (cfg or EvaluationConfig()).environment.target_ranges
    outside = ((schedule["roll_deg"].abs() > tg.roll_deg) | (schedule["pitch_deg"].abs() > tg.pitch_deg)
               | (schedule["airspeed_m_s"] < tg.airspeed_m_s[0]) | (schedule["airspeed_m_s"] > tg.airspeed_m_s[1]))
    if outside.any():
        logger.warning(f"{int(outside.sum())} schedule rows lie outside the target bounds: {path}")
    return schedule


def empty_schedule() -> pd.DataFrame:
    """A schedule with no setpoint changes; the run holds the initial trim."""
    return pd.DataFrame({column: pd.Series(dtype=float) for column in SCHEDULE_COLUMNS})


def _active_targets(schedule: pd.DataFrame, time_s: float, default: Targets) -> Targets:
    active = schedule[schedule["time_s"] <= time_s + 1e-9]
    if active.empty:
        return default
    row = active.iloc[-1]
    return Targets(math.radians(row["roll_deg"]), math.radians(row["pitch_deg"]), float(row["airspeed_m_s"]))


def schedule_horizon(schedule: pd.DataFrame, dt: float, horizon_steps: int) -> int:
    """Rows needed so the final setpoint still gets a full evaluation horizon."""
    if schedule.empty:
        return horizon_steps
    return max(horizon_steps, int(math.ceil(schedule["time_s"].max() / dt)) + horizon_steps)


def run_schedule(env: AttitudeControlEnv, controller, schedule: pd.DataFrame,
                 initial: Optional[InitialConditions] = None, horizon: Optional[int] = None,
                 wind=None, seed: int = 0) -> pd.DataFrame:
    """
    Fly the schedule from `initial`; returns one trace row per step (row k at k * dt).

    Targets switch when the simulation time reaches a schedule row.
    """
    dt = env.cfg.step_dt_s
    horizon = horizon or env.cfg.max_steps
    initial = initial or InitialConditions(airspeed=18.0, alpha=0.0, beta=0.0, roll=0.0, pitch=0.0, yaw=0.0)
    trim = Targets(initial.roll, initial.pitch, initial.airspeed)
    scenario = EpisodeScenario(initial, _active_targets(schedule, 0.0, trim), wind or wind_setting(TurbulenceSeverity.NONE))

    obs, _ = env.reset(seed=seed, options={"scenario": scenario})
    controller.reset()
    rows = [env.telemetry()]
    for k in range(1, horizon):
        env.set_targets(_active_targets(schedule, k * dt, trim))
        obs, _, terminated, truncated, info = env.step(controller.act(obs, env))
        rows.append(info["telemetry"])
        if terminated:
            logger.warning(f"Episode terminated at t = {k * dt:.2f} s")
            break
    return pd.DataFrame(rows)


def tracking_error_summary(trace: pd.DataFrame) -> pd.DataFrame:
    """Mean absolute tracking error of each setpoint segment (a segment starts at every target change)."""
    targets = trace[["target_roll_rad", "target_pitch_rad", "target_airspeed_m_s"]].to_numpy()
    changed = np.any(np.diff(targets, axis=0) != 0.0, axis=1)
    segment = np.concatenate([[0], np.cumsum(changed)])
    frame = pd.DataFrame({
        "segment": segment,
        "time_s": trace["time_s"].to_numpy(),
        "roll_error_deg": np.degrees(np.abs(_wrap(trace["roll_rad"] - trace["target_roll_rad"]))),
        "pitch_error_deg": np.degrees(np.abs(_wrap(trace["pitch_rad"] - trace["target_pitch_rad"]))),
        "airspeed_error_m_s": np.abs(trace["airspeed_m_s"] - trace["target_airspeed_m_s"]),
    })
    summary = frame.groupby("segment").agg(
        start_time_s=("time_s", "min"),
        roll_mae_deg=("roll_error_deg", "mean"),
        pitch_mae_deg=("pitch_error_deg", "mean"),
        airspeed_mae_m_s=("airspeed_error_m_s", "mean"),
    )
    return summary.reset_index()


def parse_settings(values: Iterable[str]) -> List[TurbulenceSeverity]:
    """Expand CLI setting names; 'all' selects every severity."""
    result: List[TurbulenceSeverity] = []
    for value in values:
        chosen = list(TurbulenceSeverity) if value == "all" else [TurbulenceSeverity(value)]
        for severity in chosen:
            if severity not in result:
                result.append(severity)
    return result
