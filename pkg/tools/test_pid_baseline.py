import math

import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from app.models import AirframeConfig, EvaluationConfig, PidGains, TurbulenceSeverity
from app.services.environment import EpisodeScenario, InitialConditions, Targets
from app.services.evaluation import ControllerSpec, make_eval_env, overshoot_pct, run_battery, run_episode
from app.services.pid_baseline import PidController, PidIntegrators, pid_step

MAX_DEF = math.radians(30.0)
TRIM = Targets(roll=0.0, pitch=0.0, airspeed=18.0)


def level(**overrides):
    m = {"airspeed": 18.0, "roll": 0.0, "pitch": 0.0, "p": 0.0, "q": 0.0, "r": 0.0}
    m.update(overrides)
    return m


def test_zero_error_gives_zero_command():
    cmd, integrators, _ = pid_step(level(), TRIM, PidIntegrators(), PidGains())
    assert (cmd.aileron, cmd.elevator, cmd.throttle) == (0.0, 0.0, 0.0)
    assert integrators == PidIntegrators()


def test_slow_airspeed_opens_throttle():
    _, _, raw = pid_step(level(airspeed=16.0), TRIM, PidIntegrators(), PidGains())
    assert raw["throttle"] == pytest.approx(1.0)


def test_nose_low_pulls_up():
    # a nose-up pitch needs trailing-edge-up (negative) elevator
    _, _, raw = pid_step(level(pitch=-0.1), TRIM, PidIntegrators(), PidGains())
    assert raw["elevator"] == pytest.approx(-0.4)


def test_roll_rate_damping():
    cmd, _, _ = pid_step(level(p=0.2), TRIM, PidIntegrators(), PidGains())
    assert cmd.aileron == pytest.approx(-0.1)


def test_integrators_accumulate_error():
    _, integrators, _ = pid_step(level(airspeed=17.0, pitch=0.05), TRIM, PidIntegrators(), PidGains(), dt=0.01)
    assert integrators.airspeed == pytest.approx(-0.01)
    assert integrators.pitch == pytest.approx(0.0005)


def test_angle_errors_are_wrapped():
    _, _, raw = pid_step(level(roll=math.pi - 0.01), Targets(-math.pi + 0.01, 0.0, 18.0),
                         PidIntegrators(), PidGains())
    assert raw["aileron"] == pytest.approx(0.02)


@given(st.floats(-math.pi, math.pi), st.floats(-1.5, 1.5), st.floats(5.0, 40.0),
       st.floats(-5.0, 5.0), st.floats(-5.0, 5.0))
def test_commands_respect_limits(roll, pitch, airspeed, p, q):
    cmd, _, _ = pid_step(level(roll=roll, pitch=pitch, airspeed=airspeed, p=p, q=q), TRIM,
                         PidIntegrators(), PidGains(), max_deflection_rad=MAX_DEF)
    assert -MAX_DEF <= cmd.aileron <= MAX_DEF
    assert -MAX_DEF <= cmd.elevator <= MAX_DEF
    assert 0.0 <= cmd.throttle <= 1.0


def test_integrator_holds_while_saturated():
    integrators = PidIntegrators()
    for _ in range(1000):
        cmd, integrators, _ = pid_step(level(airspeed=5.0), Targets(0.0, 0.0, 25.0), integrators, PidGains())
    assert cmd.throttle == 1.0
    assert integrators.airspeed == 0.0


def test_integrator_unwinds_from_saturation():
    wound = PidIntegrators(airspeed=-20.0)
    _, integrators, raw = pid_step(level(airspeed=19.0), TRIM, wound, PidGains())
    assert raw["throttle"] > 1.0
    assert integrators.airspeed > wound.airspeed


def test_controller_reset_clears_state():
    controller = PidController(PidGains())
    controller.command(level(airspeed=17.0), TRIM)
    assert controller.integrators != PidIntegrators()
    controller.reset()
    assert controller.integrators == PidIntegrators()


def test_pitch_step_is_well_damped(airframe, eval_cfg):
    env = make_eval_env(airframe, eval_cfg)
    controller = ControllerSpec("pid", eval_cfg.pid).build(env)
    scenario = EpisodeScenario(InitialConditions(airspeed=18.0, alpha=0.033, beta=0.0, roll=0.0, pitch=0.05, yaw=0.0),
                               Targets(roll=0.0, pitch=-0.05, airspeed=18.0))
    errors = run_episode(env, controller, scenario).errors["pitch"]
    assert overshoot_pct(errors) < 35.0
    assert abs(errors[-1]) < math.radians(2.0)


@pytest.mark.slow
def test_pid_battery_in_calm_air():
    cfg = EvaluationConfig()
    assert cfg.episodes_per_setting == 100 and cfg.horizon_steps == 1500
    result = run_battery(ControllerSpec("pid", cfg.pid), cfg, AirframeConfig(), [TurbulenceSeverity.NONE],
                         seed=0, workers=4)
    row = result.aggregate[0]
    assert row.episodes == 100
    assert not result.episodes["diverged"].any()
    assert row.success_all_pct >= 90.0
