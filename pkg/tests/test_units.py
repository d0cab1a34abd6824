import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lowthrust_mpsp.units import (
    UNIT_TAGS,
    ScenarioError,
    UnitSystem,
    flight_days,
    from_canonical,
    load_scenario,
    scenario_to_config,
    to_canonical,
)
from lowthrust_mpsp.propagator import rk4_step


def test_bundled_scenario_boundary_states(scenario):
    assert np.allclose(scenario.r0, [1.001367, 0.140622, -6.594513e-6], rtol=0, atol=0)
    assert scenario.r0[2] < 0.0
    assert scenario.mu == 1.0


def test_flight_window_in_canonical_time(scenario):
    assert flight_days({"depart_epoch": "2020-10-01", "arrive_epoch": "2023-12-01"}) == 1156.0
    assert scenario.tf - scenario.t0 == pytest.approx(1156 * 86400 / 5.022643e6, rel=1e-15)
    # printed figure is truncated, not rounded
    assert scenario.tf - scenario.t0 == pytest.approx(19.8855, rel=1e-5)


def test_zero_isp_rejected():
    cfg = scenario_to_config(load_scenario())
    cfg["Isp_s"] = 0.0
    with pytest.raises(ScenarioError, match="non-positive specific impulse"):
        load_scenario(cfg)


@pytest.mark.parametrize("key", ["LU_km", "Tmax_N", "r0_LU"])
def test_missing_field(key):
    cfg = scenario_to_config(load_scenario())
    del cfg[key]
    with pytest.raises(ScenarioError, match="missing field"):
        load_scenario(cfg)


def test_reversed_epochs_rejected():
    cfg = scenario_to_config(load_scenario())
    del cfg["tof_days"]
    cfg.update(depart_epoch="2023-12-01", arrive_epoch="2020-10-01")
    with pytest.raises(ScenarioError, match="tf <= t0"):
        load_scenario(cfg)


def test_load_from_path(tmp_path, scenario):
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(scenario_to_config(scenario)))
    again = load_scenario(path)
    assert again.tf == pytest.approx(scenario.tf, rel=1e-15)
    assert again.thrust_max == pytest.approx(scenario.thrust_max, rel=1e-15)


def test_engine_constants(scenario):
    u = scenario.units
    assert to_canonical(1.5e-3, "force", u) == pytest.approx(1.0118e-2, rel=1e-4)
    assert scenario.thrust_max == pytest.approx(1.0118e-2, rel=1e-4)
    # 29.41965 km/s over VU
    assert scenario.exhaust_velocity == pytest.approx(0.98775, abs=2e-5)
    assert to_canonical(1.495979e8, "length", u) == 1.0


def test_velocity_unit_matches_table(scenario):
    u = scenario.units
    assert u.velocity_unit == pytest.approx(u.length_unit / u.time_unit, rel=1e-9)
    # printed value differs from LU/TU in the 7th digit
    assert from_canonical(1.0, "velocity", u) == pytest.approx(29.784692, rel=2e-7)


def test_final_mass_in_kg(scenario):
    assert from_canonical(0.84248, "mass", scenario.units) == pytest.approx(21.062, abs=1e-3)


def test_unknown_tag(scenario):
    with pytest.raises(ScenarioError, match="unknown unit tag"):
        to_canonical(1.0, "angle", scenario.units)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_units_must_be_positive(bad):
    with pytest.raises(ScenarioError):
        UnitSystem(bad, 1.0, 1.0)


@given(st.sampled_from(UNIT_TAGS), st.floats(-1e12, 1e12, allow_nan=False).filter(lambda x: abs(x) > 1e-300))
def test_round_trip(tag, q):
    u = load_scenario().units
    back = from_canonical(to_canonical(q, tag, u), tag, u)
    assert back == pytest.approx(q, rel=1e-14)


def test_round_trip_arrays(scenario):
    q = np.array([1.0, -2.5, 3e7])
    for tag in UNIT_TAGS:
        assert np.allclose(from_canonical(to_canonical(q, tag, scenario.units), tag, scenario.units), q, rtol=1e-14)


def test_circular_orbit_normalisation(scenario):
    X = np.array([1.0, 0, 0, 0, 1.0, 0, 1.0, 0.0])
    n = 6283
    h = 2 * np.pi / n
    for i in range(n):
        X = rk4_step(i * h, X, lambda t: np.zeros(3), 0, h, scenario)
    assert np.allclose(X[:6], [1, 0, 0, 0, 1, 0], atol=1e-10)
