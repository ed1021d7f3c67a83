from functools import partial
import logging
import math

import numpy as np
import pandas as pd
import pytest

from app.errors import ConfigError
from app.models import CurriculumConfig, PpoHyperparams, SuccessBounds, TrainingConfig, TurbulenceSeverity
from app.services.environment import AttitudeControlEnv
from app.services.evaluation import (
    ControllerSpec, EpisodeRecord, build_scenarios, compute_metrics, control_variation, empty_schedule,
    final_dwell_start, load_schedule, make_eval_env, overshoot_pct, paired_comparison, parse_settings,
    rise_time, run_battery, run_schedule, schedule_horizon, tracking_error_summary,
)
from app.services.neuralnet import PolicyParameters, init_params
from app.services.pid_baseline import PidController
from app.services.ppo import network_spec_for, train

DT = 0.01


def record(roll, pitch=None, airspeed=None, commands=None, diverged=False) -> EpisodeRecord:
    roll = np.asarray(roll, dtype=float)
    zeros = np.zeros_like(roll)
    return EpisodeRecord(
        errors={"roll": roll, "pitch": zeros if pitch is None else np.asarray(pitch, dtype=float),
                "airspeed": zeros if airspeed is None else np.asarray(airspeed, dtype=float)},
        commands=np.zeros((roll.size, 3)) if commands is None else commands,
        dt=DT, diverged=diverged)


def test_pinned_trace_is_a_clean_success():
    report = compute_metrics(record(np.zeros(200)), SuccessBounds())
    assert report.success
    for metrics in report.states().values():
        assert metrics.success
        assert metrics.settling_time_s == 0.0
        assert metrics.overshoot_pct == 0.0
        assert metrics.rise_time_s == 0.0 and metrics.rise_time_degenerate
    assert report.control_variation_per_s == 0.0


def test_exponential_decay_rise_time():
    t = np.arange(1000) * DT
    rise, degenerate = rise_time(np.exp(-t), DT)
    assert not degenerate
    assert rise == pytest.approx(math.log(9.0), abs=1e-3)


def test_settling_time_is_start_of_final_dwell():
    roll = np.concatenate([np.full(50, 0.5), np.zeros(150)])
    report = compute_metrics(record(roll), SuccessBounds())
    assert report.roll.settling_time_s == pytest.approx(0.5)


def test_trace_ending_out_of_bounds_fails_without_metrics():
    roll = np.zeros(300)
    roll[-1] = 1.0
    report = compute_metrics(record(roll), SuccessBounds())
    assert not report.success
    assert not report.roll.success
    assert report.pitch.success
    assert report.pitch.rise_time_s is None and report.pitch.settling_time_s is None
    assert report.control_variation_per_s is None


def test_short_dwell_is_not_a_success():
    roll = np.concatenate([np.full(150, 0.5), np.zeros(50)])
    assert not compute_metrics(record(roll), SuccessBounds(dwell_steps=100)).roll.success


def test_diverged_episode_fails():
    assert not compute_metrics(record(np.zeros(200), diverged=True), SuccessBounds()).success


def test_rise_time_edge_cases():
    assert rise_time(np.zeros(10), DT) == (0.0, True)
    assert rise_time(np.ones(10), DT) == (None, False)


def test_state_starting_inside_its_bound_has_zero_rise_time():
    report = compute_metrics(record(np.full(200, 0.03)), SuccessBounds())
    assert report.success
    assert report.roll.rise_time_s == 0.0 and report.roll.rise_time_degenerate
    assert report.roll.settling_time_s == 0.0


def test_success_settling_above_ten_percent_keeps_rise_time_unset():
    roll = np.concatenate([np.linspace(0.35, 0.05, 50), np.full(150, 0.05)])
    report = compute_metrics(record(roll), SuccessBounds())
    assert report.success and report.roll.success
    assert report.roll.rise_time_s is None and not report.roll.rise_time_degenerate
    assert report.roll.settling_time_s == pytest.approx(0.43)


def test_overshoot_and_variation():
    assert overshoot_pct(np.array([1.0, 0.0, -0.2, 0.0])) == pytest.approx(20.0)
    assert overshoot_pct(np.array([-2.0, 0.5, 0.0])) == pytest.approx(25.0)
    commands = np.array([[0.0, 0.0, 0.0], [0.01, 0.0, 0.0]])
    assert control_variation(commands, DT) == pytest.approx(1.0 / 3.0)


def test_final_dwell_start():
    assert final_dwell_start(np.array([1.0, 0.0, 0.0]), 0.1) == 1
    assert final_dwell_start(np.array([0.0, 0.0]), 0.1) == 0
    assert final_dwell_start(np.array([0.0, 1.0]), 0.1) is None


def test_scenarios_are_reproducible_and_shared_across_settings(eval_cfg):
    first = build_scenarios(eval_cfg, TurbulenceSeverity.NONE, seed=3)
    again = build_scenarios(eval_cfg, TurbulenceSeverity.NONE, seed=3)
    light = build_scenarios(eval_cfg, TurbulenceSeverity.LIGHT, seed=3)
    assert len(first) == eval_cfg.episodes_per_setting
    for a, b, c in zip(first, again, light):
        assert a.initial == b.initial == c.initial
        assert a.targets == b.targets == c.targets
    assert [s.initial for s in build_scenarios(eval_cfg, TurbulenceSeverity.NONE, seed=4)] != [s.initial for s in first]


def test_scenario_targets_stay_in_bounds(eval_cfg):
    tg = eval_cfg.environment.target_ranges
    for scenario in build_scenarios(eval_cfg, TurbulenceSeverity.MODERATE, seed=0, episodes=50):
        assert abs(math.degrees(scenario.targets.roll)) <= tg.roll_deg + 1e-9
        assert abs(math.degrees(scenario.targets.pitch)) <= tg.pitch_deg + 1e-9
        assert tg.airspeed_m_s[0] <= scenario.targets.airspeed <= tg.airspeed_m_s[1]


def test_battery_is_deterministic(airframe, eval_cfg):
    spec = ControllerSpec("pid", eval_cfg.pid)
    settings = [TurbulenceSeverity.NONE, TurbulenceSeverity.LIGHT]
    first = run_battery(spec, eval_cfg, airframe, settings, seed=5)
    second = run_battery(spec, eval_cfg, airframe, settings, seed=5)
    pd.testing.assert_frame_equal(first.episodes, second.episodes)
    assert [row.setting for row in first.aggregate] == settings
    assert all(row.episodes == eval_cfg.episodes_per_setting for row in first.aggregate)
    assert list(first.aggregate_frame()["controller"]) == ["pid", "pid"]


def test_paired_comparison_matches_scenarios(airframe, eval_cfg):
    spec = ControllerSpec("pid", eval_cfg.pid)
    a = run_battery(spec, eval_cfg, airframe, [TurbulenceSeverity.NONE], seed=1)
    b = run_battery(spec, eval_cfg, airframe, [TurbulenceSeverity.NONE], seed=1)
    paired = paired_comparison(a, b)
    assert len(paired) == eval_cfg.episodes_per_setting
    assert (paired["success_pid"] == paired["success_pid_2"]).all()


def test_rl_controller_needs_a_policy(airframe, eval_cfg):
    with pytest.raises(ValueError):
        ControllerSpec("rl").build(make_eval_env(airframe, eval_cfg))


def test_policy_controller_reset_keeps_actions(airframe, eval_cfg, small_spec, rng):
    env = make_eval_env(airframe, eval_cfg)
    spec = network_spec_for(env, small_spec)
    controller = ControllerSpec("rl", policy=PolicyParameters(spec, init_params(spec, rng))).build(env)
    obs, _ = env.reset(seed=0)
    before = controller.act(obs, env)
    controller.reset()
    np.testing.assert_array_equal(controller.act(obs, env), before)


@pytest.mark.slow
def test_trained_policy_battery_accounting_in_moderate_wind(airframe, eval_cfg, small_spec):
    cfg = TrainingConfig(network=small_spec, environment=eval_cfg.environment,
                         curriculum=CurriculumConfig(enabled=False),
                         ppo=PpoHyperparams(n_actors=1, n_steps=64, n_epochs=2, n_minibatches=2,
                                            total_steps=256, log_interval=1))
    policy = train(partial(AttitudeControlEnv, airframe, eval_cfg.environment), cfg, seed=0).policy
    assert policy.normalizer is not None

    episodes = 6
    result = run_battery(ControllerSpec("rl", policy=policy), eval_cfg, airframe,
                         [TurbulenceSeverity.MODERATE], seed=2, workers=2, episodes=episodes)
    frame = result.episodes
    (row,) = result.aggregate
    assert len(frame) == row.episodes == episodes
    assert list(frame["episode"]) == list(range(episodes))
    assert (frame["setting"] == "moderate").all() and (frame["controller"] == "rl").all()
    assert row.success_all_pct == pytest.approx(100.0 * frame["success"].mean())
    for state in ("roll", "pitch", "airspeed"):
        assert getattr(row, f"success_{state}_pct") == pytest.approx(100.0 * frame[f"success_{state}"].mean())
    assert not (frame["diverged"] & frame["success"]).any()
    all_states = frame["success_roll"] & frame["success_pitch"] & frame["success_airspeed"] & ~frame["diverged"]
    assert (frame["success"] == all_states).all()
    failed = frame[~frame["success"]]
    assert failed["control_variation_per_s"].isna().all()
    assert failed["rise_time_roll_s"].isna().all()


def write_schedule(path, rows):
    pd.DataFrame(rows, columns=["time_s", "roll_deg", "pitch_deg", "airspeed_m_s"]).to_csv(path, index=False)
    return path


def test_schedule_switches_targets_on_time(tmp_path, airframe, eval_cfg):
    path = write_schedule(tmp_path / "schedule.csv", [(5.0, 10.0, 0.0, 18.0), (0.0, 0.0, 0.0, 18.0)])
    schedule = load_schedule(path, eval_cfg)
    assert list(schedule["time_s"]) == [0.0, 5.0]

    horizon = schedule_horizon(schedule, DT, 100)
    assert horizon == 600
    env = make_eval_env(airframe, eval_cfg, horizon)
    trace = run_schedule(env, PidController(eval_cfg.pid), schedule, horizon=horizon)
    assert len(trace) == horizon
    assert trace["time_s"].iloc[500] == pytest.approx(5.0)
    assert trace["target_roll_rad"].iloc[499] == 0.0
    assert trace["target_roll_rad"].iloc[500] == pytest.approx(math.radians(10.0))

    summary = tracking_error_summary(trace)
    assert list(summary["segment"]) == [0, 1]
    assert summary["start_time_s"].iloc[1] == pytest.approx(5.0)


def test_out_of_range_schedule_rows_warn(tmp_path, eval_cfg, caplog):
    path = write_schedule(tmp_path / "schedule.csv", [(0.0, 80.0, 0.0, 18.0)])
    with caplog.at_level(logging.WARNING):
        schedule = load_schedule(path, eval_cfg)
    assert len(schedule) == 1
    assert "outside the target bounds" in caplog.text


def test_bad_schedules_raise(tmp_path):
    with pytest.raises(ConfigError):
        load_schedule(tmp_path / "missing.csv")
    path = tmp_path / "partial.csv"
    pd.DataFrame({"time_s": [0.0], "roll_deg": [0.0]}).to_csv(path, index=False)
    with pytest.raises(ConfigError):
        load_schedule(path)


def test_empty_schedule_holds_trim(airframe, eval_cfg):
    schedule = empty_schedule()
    horizon = schedule_horizon(schedule, DT, 300)
    assert horizon == 300
    trace = run_schedule(make_eval_env(airframe, eval_cfg, horizon), PidController(eval_cfg.pid), schedule,
                         horizon=horizon)
    assert len(trace) == 300
    assert (trace["target_airspeed_m_s"] == 18.0).all()


def test_parse_settings():
    assert parse_settings(["all"]) == list(TurbulenceSeverity)
    assert parse_settings(["light", "none", "light"]) == [TurbulenceSeverity.LIGHT, TurbulenceSeverity.NONE]
    with pytest.raises(ValueError):
        parse_settings(["gale"])
