import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowthrust_mpsp.dynamics import augmented_rhs
from lowthrust_mpsp.fourier import BasisMap, FourierWeights, control_at
from lowthrust_mpsp.propagator import FourierControl, propagate_segmented, rk4_step
from lowthrust_mpsp.sensitivity import (
    GrazingSwitchError,
    GridMismatchError,
    accumulate,
    rhs_jacobians,
    step_jacobians,
    switch_jump_jacobians,
)

EPS_STEP = 1e-4
X0_STEP = 1e-6


def _state(rng):
    r = rng.normal(size=3)
    r *= rng.uniform(0.8, 1.6) / np.linalg.norm(r)
    return np.concatenate([r, 0.3 * rng.normal(size=3), [rng.uniform(0.4, 1.0)], [rng.normal()]])


def test_coast_has_no_control_sensitivity(scenario, rng):
    _, FU = rhs_jacobians(0.0, _state(rng), rng.normal(size=3), 0, scenario)
    assert not FU.any()


def test_velocity_block_along_z_primer(scenario):
    X = np.array([1.0, 0, 0, 0, 1, 0, 1.0, 0.0])
    _, FU = rhs_jacobians(0.0, X, [0, 0, 1.0], 1, scenario)
    assert np.allclose(FU[3:6], -scenario.thrust_max * np.diag([1.0, 1.0, 0.0]), atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0, 1]))
def test_rhs_jacobians_match_fd(seed, u):
    from lowthrust_mpsp.units import load_scenario
    sc = load_scenario()
    rng = np.random.default_rng(seed)
    X, U = _state(rng), rng.normal(size=3)
    FX, FU = rhs_jacobians(0.0, X, U, u, sc)
    d = 1e-6
    for j in range(8):
        e = np.eye(8)[j] * d
        fd = (augmented_rhs(0, X + e, U, u, sc) - augmented_rhs(0, X - e, U, u, sc)) / (2 * d)
        assert np.allclose(FX[:, j], fd, rtol=1e-6, atol=1e-8)
    for j in range(3):
        e = np.eye(3)[j] * d
        fd = (augmented_rhs(0, X, U + e, u, sc) - augmented_rhs(0, X, U - e, u, sc)) / (2 * d)
        assert np.allclose(FU[:, j], fd, rtol=1e-6, atol=1e-8)


@pytest.fixture(scope="module")
def random_weights():
    rng = np.random.default_rng(7)
    return FourierWeights(3, 0.05 * rng.normal(size=21) + np.r_[0.6, np.zeros(20)])


def test_step_jacobians_zero_step(scenario, random_weights, rng):
    bm = BasisMap(scenario.t0, scenario.tf)
    J = step_jacobians(1.0, _state(rng), 1, random_weights, bm, 0.0, scenario)
    assert np.array_equal(J.dF_dX, np.eye(8))
    assert not J.dF_deps.any()


@pytest.mark.parametrize("u", [0, 1])
def test_step_jacobians_match_fd(scenario, random_weights, rng, u):
    bm = BasisMap(scenario.t0, scenario.tf)
    X, t, h = _state(rng), 2.0, 0.01
    J = step_jacobians(t, X, u, random_weights, bm, h, scenario)

    def step(X, w):
        return rk4_step(t, X, FourierControl(w, bm), u, h, scenario)

    d = 1e-6
    for j in range(8):
        e = np.eye(8)[j] * d
        fd = (step(X + e, random_weights) - step(X - e, random_weights)) / (2 * d)
        assert np.allclose(J.dF_dX[:, j], fd, rtol=1e-7, atol=1e-10)
    for j in range(random_weights.size):
        e = np.eye(random_weights.size)[j] * d
        fd = (step(X, random_weights.shifted(e)) - step(X, random_weights.shifted(-e))) / (2 * d)
        assert np.allclose(J.dF_deps[:, j], fd, rtol=1e-7, atol=1e-10)


def test_jump_is_identity_without_rhs_change():
    f = np.arange(8.0)
    J = switch_jump_jacobians(f, f, np.ones(8), np.ones(3), 0.3)
    assert np.array_equal(J.dXplus_dXminus, np.eye(8))
    assert not J.dXplus_dU.any()


def test_grazing_switch_rejected():
    with pytest.raises(GrazingSwitchError):
        switch_jump_jacobians(np.zeros(8), np.ones(8), np.ones(8), np.ones(3), 1e-12)


def _terminal(scenario, w, bm, X0):
    return propagate_segmented(X0, FourierControl(w, bm), scenario).terminal_output


def test_coast_only_state_sensitivity(scenario):
    bm = BasisMap(scenario.t0, scenario.tf)
    w = FourierWeights.constant(2, [0.1, 0.2, 0.0])
    X0 = np.concatenate([scenario.x0, [0.0]])
    traj = propagate_segmented(X0, FourierControl(w, bm), scenario)
    assert traj.n_segments == 1 and traj.segments[0].u == 0
    sb = accumulate(traj, w, bm, scenario)
    for j in range(8):
        e = np.eye(8)[j] * X0_STEP
        fd = (_terminal(scenario, w, bm, X0 + e) - _terminal(scenario, w, bm, X0 - e)) / (2 * X0_STEP)
        assert np.linalg.norm(sb.A[:, j] - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))
    assert not sb.B_v.any()


@pytest.fixture(scope="module")
def fitted(scenario, context):
    X0 = np.concatenate([scenario.x0, [context.nominal.lambda_m0]])
    traj = propagate_segmented(X0, FourierControl(context.eps0, context.bmap), scenario)
    return X0, traj, accumulate(traj, context.eps0, context.bmap, scenario)


def _fd_column(scenario, context, X0, j, d=EPS_STEP):
    e = np.eye(context.eps0.size)[j] * d
    w, bm = context.eps0, context.bmap
    return (_terminal(scenario, w.shifted(e), bm, X0) - _terminal(scenario, w.shifted(-e), bm, X0)) / (2 * d)


@pytest.mark.parametrize("j", [0, 1, 16, 31, 47, 62, 78, 92])
def test_control_sensitivity_matches_fd(scenario, context, fitted, j):
    X0, _, sb = fitted
    fd = _fd_column(scenario, context, X0, j)
    assert np.linalg.norm(sb.B_v[:, j] - fd) / np.linalg.norm(fd) <= 1e-5


def test_switch_compensation_matters(scenario, context, fitted):
    X0, traj, _ = fitted
    bare = accumulate(traj, context.eps0, context.bmap, scenario, jump_compensation=False)
    fd = _fd_column(scenario, context, X0, 0)
    assert np.linalg.norm(bare.B_v[:, 0] - fd) / np.linalg.norm(fd) > 1e-2


def test_lambda_m0_column_matches_fd(scenario, context, fitted):
    X0, _, sb = fitted
    e = np.eye(8)[7] * X0_STEP
    w, bm = context.eps0, context.bmap
    fd = (_terminal(scenario, w, bm, X0 + e) - _terminal(scenario, w, bm, X0 - e)) / (2 * X0_STEP)
    assert np.linalg.norm(sb.lambda_m0_column - fd) / np.linalg.norm(fd) <= 1e-5


def test_node_held_variant_close(scenario, context, fitted):
    _, traj, sb = fitted
    held = accumulate(traj, context.eps0, context.bmap, scenario, node_held=True)
    rel = np.linalg.norm(held.B_v - sb.B_v) / np.linalg.norm(sb.B_v)
    assert 0 < rel < 0.05


def test_grid_mismatch_detected(scenario, context, fitted):
    _, traj, _ = fitted
    with pytest.raises(GridMismatchError):
        accumulate(traj, context.eps0.shifted(np.full(context.eps0.size, 1e-3)), context.bmap, scenario)
