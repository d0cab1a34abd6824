import numpy as np
import pytest

from lowthrust_mpsp.continuation import (
    BoundaryConditions,
    ContinuationSpec,
    blend_conditions,
    outer_loop,
)


@pytest.fixture
def pair(scenario):
    ref = BoundaryConditions.from_scenario(scenario)
    per = BoundaryConditions(ref.x0 + 0.01, ref.rf - 0.02, ref.vf + 0.03, ref.thrust_max * 1.1,
                             ref.exhaust_velocity * 0.9)
    return ref, per


def test_blend_endpoints(pair):
    ref, per = pair
    assert blend_conditions(ref, per, 0.0) is ref
    assert blend_conditions(ref, per, 1.0) is per


def test_blend_midpoint(pair):
    ref, per = pair
    mid = blend_conditions(ref, per, 0.5)
    assert np.allclose(mid.x0, ref.x0 + 0.005)
    assert np.allclose(mid.rf, ref.rf - 0.01)
    assert mid.thrust_max == pytest.approx(ref.thrust_max * 1.05)
    assert mid.exhaust_velocity == pytest.approx(ref.exhaust_velocity * 0.95)


@pytest.mark.parametrize("tau", [-0.1, 1.5])
def test_blend_rejects_out_of_range(pair, tau):
    with pytest.raises(ValueError):
        blend_conditions(*pair, tau)


def test_boundary_validation(scenario):
    ref = BoundaryConditions.from_scenario(scenario)
    with pytest.raises(ValueError):
        BoundaryConditions(np.r_[ref.x0[:6], 0.0], ref.rf, ref.vf, 1.0, 1.0)
    with pytest.raises(ValueError):
        BoundaryConditions(ref.x0, ref.rf, ref.vf, 0.0, 1.0)


def test_apply_round_trip(scenario):
    ref = BoundaryConditions.from_scenario(scenario)
    sc = ref.apply(scenario)
    assert np.array_equal(sc.x0, scenario.x0) and sc.thrust_max == scenario.thrust_max


def _guide(ctx, c_per, **kw):
    return outer_loop(ctx.scenario, c_per, ctx.eps0, ctx.nominal.lambda_m0, ctx.bmap, ctx.n_seg_ref,
                      h_max=ctx.h_max, **kw)


def test_zero_perturbation_no_continuation(context):
    sol = _guide(context, BoundaryConditions.from_scenario(context.scenario))
    assert sol.converged and not sol.continuation_triggered
    assert sol.total_newton_iterations <= 5


@pytest.mark.parametrize("pct", [3.0, -3.0])
def test_small_thrust_change_direct(context, pct):
    ref = BoundaryConditions.from_scenario(context.scenario)
    per = BoundaryConditions(ref.x0, ref.rf, ref.vf, ref.thrust_max * (1 + pct / 100), ref.exhaust_velocity)
    sol = _guide(context, per)
    assert sol.converged and sol.continuation_steps == 0 and sol.n_seg_tol == 0
    assert len(sol.trace) == 1


def test_exhausted_segment_tolerance(context):
    ref = BoundaryConditions.from_scenario(context.scenario)
    per = BoundaryConditions(ref.x0, ref.rf, ref.vf, ref.thrust_max * 0.9, ref.exhaust_velocity)
    sol = outer_loop(context.scenario, per, context.eps0, context.nominal.lambda_m0, context.bmap,
                     n_seg_ref=1, h_max=context.h_max, cont=ContinuationSpec(dtau0=0.05, dtau_min=0.02))
    assert not sol.converged
    assert "segment tolerance exhausted" in sol.failure_reason
    assert sol.continuation_triggered
