import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from app.core.propulsion import discharge_velocity, propeller_moment, propulsion_wrench, thrust
from app.models import PropulsionConfig

CFG = PropulsionConfig()


@given(st.floats(min_value=0.0, max_value=60.0))
def test_idle_throttle_gives_no_thrust(airspeed):
    assert discharge_velocity(airspeed, 0.0, CFG) == airspeed
    wrench = propulsion_wrench(airspeed, 0.0, CFG)
    assert wrench.force[0] == 0.0
    assert wrench.moment[0] == 0.0


def test_static_full_throttle_thrust():
    expected = 0.5 * CFG.air_density_kg_m3 * CFG.disc_area_m2 * CFG.efficiency * CFG.motor_constant_m_s ** 2
    assert thrust(0.0, 1.0, CFG) == pytest.approx(expected)


def test_half_throttle_reaction_moment():
    assert propeller_moment(0.5, CFG) == pytest.approx(-0.18857, abs=1e-5)


@given(st.floats(min_value=0.0, max_value=40.0), st.floats(min_value=0.0, max_value=1.0))
def test_thrust_non_negative_below_motor_constant(airspeed, throttle):
    assert thrust(airspeed, throttle, CFG) >= 0.0


def test_windmilling_thrust_is_negative():
    assert thrust(50.0, 0.5, CFG) < 0.0


def test_reaction_moment_decreases_with_throttle():
    moments = [propeller_moment(t, CFG) for t in np.linspace(0.0, 1.0, 11)]
    assert all(b < a for a, b in zip(moments, moments[1:]))


def test_out_of_range_throttle_is_rejected():
    with pytest.raises(ValueError):
        propulsion_wrench(18.0, 1.2, CFG)
