import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowthrust_mpsp.continuation import BoundaryConditions
from lowthrust_mpsp.mpsp import (
    ControlAuthorityError,
    ConvergenceSpec,
    NewtonWeights,
    count_segments,
    inner_loop,
    newton_direction,
)
from lowthrust_mpsp.propagator import SegmentedTrajectory, TrajectorySegment


def _random_problem(seed, n=10):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(7, 8))
    return A, rng.normal(size=(7, n)), rng.normal(size=7)


def test_zero_error_gives_zero_step():
    A, B, _ = _random_problem(0)
    d_eps, d_lm0, p = newton_direction(A, B, np.zeros(7))
    assert not d_eps.any() and d_lm0 == 0.0 and not p.any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_step_cancels_linearised_error(seed):
    A, B, dY = _random_problem(seed)
    d_eps, d_lm0, _ = newton_direction(A, B, dY)
    assert np.allclose(A[:, 7] * d_lm0 + B @ d_eps, dY, atol=1e-9)


def test_identity_weights_give_minimum_norm():
    A, B, dY = _random_problem(3)
    J = np.column_stack([A[:, 7], B])
    oracle = np.linalg.lstsq(J, dY, rcond=None)[0]  # minimum-norm solution
    d_eps, d_lm0, _ = newton_direction(A, B, dY)
    assert np.allclose(np.r_[d_lm0, d_eps], oracle, atol=1e-12)


def test_weighted_minimum_norm():
    A, B, dY = _random_problem(4)
    R = np.diag(np.linspace(1.0, 5.0, B.shape[1]))
    w = NewtonWeights(R, 2.0)
    d_eps, d_lm0, _ = newton_direction(A, B, dY, w)
    # oracle: argmin d^T W d subject to J d = dY, W = blkdiag(R_0, R)
    J = np.column_stack([A[:, 7], B])
    Winv = np.diag(np.r_[0.5, 1.0 / np.diag(R)])
    oracle = Winv @ J.T @ np.linalg.solve(J @ Winv @ J.T, dY)
    assert np.allclose(np.r_[d_lm0, d_eps], oracle, atol=1e-12)


def test_rank_deficient_rejected():
    A, B, dY = _random_problem(5, n=3)
    A[:, 7] = 0.0
    with pytest.raises(ControlAuthorityError):
        newton_direction(A, B, dY)


def test_weight_validation():
    with pytest.raises(ValueError):
        NewtonWeights(R_0=0.0)
    with pytest.raises(ValueError):
        NewtonWeights(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        NewtonWeights(-np.eye(2))


def test_spec_validation():
    with pytest.raises(ValueError):
        ConvergenceSpec(pos_tol=0.0)
    with pytest.raises(ValueError):
        ConvergenceSpec(max_newton_iters=0)


def _fake(durations_and_u):
    segs, t = [], 0.0
    for d, u in durations_and_u:
        times = np.array([t, t + d])
        segs.append(TrajectorySegment(u, times, np.ones((2, 8)), np.ones((2, 3))))
        t += d
    return SegmentedTrajectory(segs, 1.0, 1.0, 1.0)


def test_count_segments():
    assert count_segments(_fake([(1, 1), (2, 0), (1, 1)])) == 3
    # a sliver between equal throttles merges them
    assert count_segments(_fake([(1, 1), (1e-12, 0), (1, 1)])) == 1
    assert count_segments(_fake([(1e-12, 1), (1, 0)])) == 1


def test_zero_perturbation_converges_fast(scenario, context):
    res = inner_loop(scenario, context.eps0, context.nominal.lambda_m0, context.bmap,
                     context.n_seg_ref, h_max=context.h_max)
    assert res.sign == 1 and res.iterations <= 5
    assert res.terminal_error.within(ConvergenceSpec())
    assert res.n_seg == context.n_seg_ref


def test_delta_max_gate(scenario, context):
    target = BoundaryConditions.from_scenario(scenario)
    target = BoundaryConditions(target.x0, target.rf + 0.05, target.vf, target.thrust_max,
                                target.exhaust_velocity).apply(scenario)
    res = inner_loop(target, context.eps0, context.nominal.lambda_m0, context.bmap, context.n_seg_ref,
                     spec=ConvergenceSpec(delta_max=1e-3), h_max=context.h_max)
    assert res.sign == 0 and res.iterations == 0 and "delta_max" in res.reason


def test_step_length_floor(scenario, context):
    target = scenario.replace(thrust_max=scenario.thrust_max * 0.9)
    res = inner_loop(target, context.eps0, context.nominal.lambda_m0, context.bmap,
                     n_seg_ref=context.n_seg_ref + 20, h_max=context.h_max)
    assert res.sign == 0 and "kappa_min" in res.reason


def test_iteration_cap(scenario, context):
    target = scenario.replace(thrust_max=scenario.thrust_max * 1.03)
    res = inner_loop(target, context.eps0, context.nominal.lambda_m0, context.bmap, context.n_seg_ref,
                     spec=ConvergenceSpec(max_newton_iters=1), h_max=context.h_max)
    assert res.sign == 0 and res.iterations == 1 and "cap" in res.reason
    assert [r.iteration for r in res.history] == [0, 1]
