import csv
import json

import numpy as np
import pytest

from lowthrust_mpsp.cases import (
    BASE_DX0,
    CUBE_HALF_SIDE,
    CaseError,
    CaseReport,
    CaseSpec,
    build_case,
    run_case,
    scenario_hash,
    structural_checks,
    switch_angle_jump,
    suite_cases,
    switch_resolution,
)
from lowthrust_mpsp.cli import main
from lowthrust_mpsp.nominal import save_nominal
from lowthrust_mpsp.propagator import TrajectorySegment
from lowthrust_mpsp.units import from_canonical


@pytest.mark.parametrize("text,kind,params,cid", [
    ("table4:6", "terminal_position", (-1.0, 1.0, -1.0), "table4_6"),
    ("table3:1", "initial_state", (-3.0,), "table3_1"),
    ("initial_state:-1", "initial_state", (-1.0,), "ic_k-1"),
    ("terminal_position:+,-,+", "terminal_position", (1.0, -1.0, 1.0), "tf_+-+"),
    ("thruster:3", "thruster", (3.0,), "tmax_+3"),
])
def test_parse(text, kind, params, cid):
    spec = CaseSpec.parse(text)
    assert (spec.kind, spec.params, spec.case_id) == (kind, params, cid)


@pytest.mark.parametrize("text", ["table4:0", "table4:9", "table3:x", "warp:1", "thruster:1,2",
                                  "terminal_position:+,+", "terminal_position:2,1,1", "thruster:abc"])
def test_parse_errors(text):
    with pytest.raises(CaseError):
        CaseSpec.parse(text)


def test_suites():
    assert [len(suite_cases(s)) for s in ("table3", "table4", "table5")] == [9, 8, 6]
    assert [c.params for c in suite_cases("table6")] == [c.params for c in suite_cases("table5")]
    assert suite_cases("table4")[0].params == (1.0, 1.0, 1.0)
    with pytest.raises(CaseError):
        suite_cases("table9")


def test_thruster_case(scenario):
    c = build_case(CaseSpec("thruster", (10,)), scenario)
    assert from_canonical(c.thrust_max, "force", scenario.units) == pytest.approx(1.65e-3, rel=1e-12)
    with pytest.raises(CaseError):
        build_case(CaseSpec("thruster", (-100,)), scenario)


def test_terminal_vertex(scenario):
    c = build_case(CaseSpec("terminal_position", (1, 1, 1)), scenario)
    assert np.allclose(c.rf - scenario.rf, CUBE_HALF_SIDE)
    assert np.array_equal(c.x0, scenario.x0)


def test_initial_state_case(scenario):
    c = build_case(CaseSpec("initial_state", (2.0,), ic_scale=0.5), scenario)
    assert np.allclose(c.x0[:6] - scenario.x0[:6], BASE_DX0)
    assert c.x0[6] == scenario.m0


def test_scenario_hash_sensitive(scenario):
    assert scenario_hash(scenario) == scenario_hash(scenario.replace())
    assert scenario_hash(scenario) != scenario_hash(scenario.replace(thrust_max=scenario.thrust_max * 1.01))


def test_nominal_structural_checks(nominal):
    chk = structural_checks(nominal.trajectory)
    assert chk["bang_consistent"] and chk["mass_consistent"] and chk["angles_continuous"]


def test_run_case_artifacts(tmp_path, context):
    rep = run_case(CaseSpec.parse("thruster:3"), context, tmp_path, reoptimize_fuel=True)
    assert rep.status == "converged" and rep.continuation_steps == 0
    assert rep.pos_err_km <= 500 and rep.vel_err_km_s <= 0.1 and rep.lam_mf <= 1e-6
    assert 0.0 < rep.fuel_increase_vs_optimal_pct < 3.0
    assert all(rep.checks[k] for k in ("angles_continuous", "bang_consistent", "mass_consistent"))
    for suffix in ("trajectory.csv", "angles.csv", "throttle.csv", "weights.json", "report.json"):
        assert (tmp_path / f"tmax_+3_{suffix}").exists()
    doc = json.loads((tmp_path / "tmax_+3_report.json").read_text())
    assert doc["status"] == "converged" and doc["trace"]
    assert len(rep.row()) == len(CaseReport.SUMMARY_COLUMNS)


def test_switch_resolution_floor(context):
    assert switch_resolution(context.eps0, context.nominal.trajectory) >= 1e-12


@pytest.fixture
def cli_out(tmp_path, context):
    save_nominal(tmp_path / "nominal.json", context.nominal, scenario_hash=scenario_hash(context.scenario))
    return tmp_path


def test_cli_nominal_and_export(cli_out, capsys):
    assert main(["--out", str(cli_out), "nominal"]) == 0
    assert "5 thrust + 4 coast" in capsys.readouterr().out
    assert main(["--out", str(cli_out), "export", "--what", "throttle"]) == 0
    with open(cli_out / "nominal_throttle.csv") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    assert rows[0] == ["t_TU", "u"] and len(rows) == 1 + 2 * 9


def test_cli_guide(cli_out, capsys):
    assert main(["--out", str(cli_out), "--strict", "guide", "--case", "thruster:-3"]) == 0
    assert "converged" in capsys.readouterr().out


def test_cli_bad_case(cli_out, capsys):
    assert main(["--out", str(cli_out), "guide", "--case", "table4:99"]) == 2
    assert "error" in capsys.readouterr().err


def _rotating_segment(t0, t1, rate, u, offset=0.0, n=10):
    t = np.linspace(t0, t1, n + 1)
    th = rate * t + offset
    U = np.column_stack([np.cos(th), np.sin(th), 0.2 * np.ones_like(th)])
    return TrajectorySegment(u, t, np.ones((n + 1, 8)), U)


def test_switch_angle_jump_ignores_smooth_rotation():
    # 5 deg per node of steady rotation, no discontinuity
    rate = np.radians(5.0) / 0.1
    left, right = _rotating_segment(0, 1, rate, 1), _rotating_segment(1, 2, rate, 0)
    assert switch_angle_jump(left, right) < 0.1


def test_switch_angle_jump_detects_kink():
    rate = np.radians(1.0) / 0.1
    left = _rotating_segment(0, 1, rate, 1)
    right = _rotating_segment(1, 2, rate, 0, offset=np.radians(3.0))
    right.node_controls[0] = left.node_controls[-1]  # duplicate node agrees, next ones do not
    assert switch_angle_jump(left, right) > 2.0
