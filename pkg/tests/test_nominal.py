import numpy as np
import pytest

from lowthrust_mpsp.dynamics import hamiltonian
from lowthrust_mpsp.nominal import (
    _fd_jacobian,
    damped_newton,
    load_nominal,
    save_nominal,
    shooting_residual,
    smoothed_throttle,
)


def test_smoothed_throttle():
    assert smoothed_throttle(0.0, 0.1) == 0.5
    assert smoothed_throttle(1.0, 1e-3) < 1e-200
    assert smoothed_throttle(-1.0, 1e-3) == 1.0
    assert smoothed_throttle(0.1, 1.0) == pytest.approx(1 / (1 + np.exp(0.1)))
    with pytest.raises(ValueError):
        smoothed_throttle(0.0, 0.0)


def test_zero_costate_coasts(scenario):
    # S = 1 everywhere: pure Kepler coast, lambda_m stays zero
    F = shooting_residual(np.zeros(7), 0.0, scenario)
    assert F[6] == 0.0
    assert np.linalg.norm(F[:3]) > 0.1


def test_residual_rejects_bad_input(scenario):
    with pytest.raises(ValueError):
        shooting_residual(np.zeros(6), 0.0, scenario)
    with pytest.raises(ValueError):
        shooting_residual(np.zeros(7), -1.0, scenario)


def test_damped_newton_scalar_root():
    rep = damped_newton(lambda x: np.array([x[0] ** 2 - 2.0]), [3.0], tol=1e-12)
    assert rep.converged and rep.x[0] == pytest.approx(np.sqrt(2.0), abs=1e-12)


def test_nominal_converged(nominal, scenario):
    assert nominal.residual_norm <= 1e-10
    F = shooting_residual(nominal.lambda0, 0.0, scenario, nominal.trajectory.h_max)
    assert np.linalg.norm(F) <= 1e-10
    assert nominal.final_mass * scenario.units.mass_unit == pytest.approx(21.062, abs=0.01)
    assert nominal.n_thrust_segments == 5 and nominal.n_coast_segments == 4


def test_shooting_jacobian_full_rank(nominal, scenario):
    h = nominal.trajectory.h_max
    fun = lambda x: shooting_residual(x, 0.0, scenario, h)  # noqa: E731
    x = nominal.lambda0.array()
    J = _fd_jacobian(fun, x, fun(x), rel=1e-7, central=True)
    s = np.linalg.svd(J, compute_uv=False)
    assert s[-1] / s[0] > 1e-10


def test_mass_costate_nonnegative_nonincreasing(nominal):
    lam_m = np.concatenate([s.node_states[:, 7] for s in nominal.trajectory.segments])
    assert lam_m.min() >= -1e-12
    assert np.all(np.diff(lam_m) <= 1e-14)


def test_hamiltonian_constant(nominal, scenario):
    H = []
    for s in nominal.trajectory.segments:
        for X, U, lr in zip(s.node_states, s.node_controls, s.node_lambda_r):
            H.append(hamiltonian(X[:7], np.concatenate([lr, U, [X[7]]]), s.u, scenario))
    assert np.ptp(H) <= 1e-6


def test_control_samples_strictly_increasing(nominal):
    t, U = nominal.control_samples()
    assert np.all(np.diff(t) > 0) and len(U) == len(t)


def test_save_load_round_trip(tmp_path, nominal, scenario):
    path = tmp_path / "nom.json"
    save_nominal(path, nominal, note="x")
    back = load_nominal(path, scenario)
    assert np.array_equal(back.lambda0.array(), nominal.lambda0.array())
    assert back.switch_times == nominal.switch_times
    assert back.final_mass == nominal.final_mass
