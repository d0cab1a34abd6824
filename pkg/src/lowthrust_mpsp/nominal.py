"""Fuel-optimal nominal trajectory by indirect single shooting.

The unknown is the initial costate ``lambda0 = [lambda_r, lambda_v, lambda_m]``.
The bang-off-bang throttle is first replaced by a logistic function of the
switching function, ``u = 1 / (1 + exp(S / rho))``, and the smoothing ``rho``
is driven towards zero with a damped Newton solve per stage.  The last stage
is polished on the exact bang-off-bang dynamics with switching detection.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import root

from .dynamics import DegeneratePrimerError, FullCostate, logistic_throttle_kernel
from .fourier import DEFAULT_ORDER, FIT_RCOND, BasisMap, FourierWeights, fit_weights_least_squares
from .propagator import (
    PropagationError,
    SegmentedTrajectory,
    SwitchDetectionError,
    default_h_max,
    full_smoothed_final,
    propagate_full,
)
from .units import Scenario

log = logging.getLogger(__name__)

RHO_SCHEDULE = (1.0, 1e-1, 1e-2, 1e-3, 1e-4)
RESIDUAL_TOL = 1e-10
MAX_NEWTON = 100
MAX_HALVINGS = 30


class ConvergenceError(RuntimeError):
    """A shooting stage failed to converge."""


def smoothed_throttle(S: float, rho: float) -> float:
    """Logistic throttle ``1 / (1 + exp(S / rho))``; tends to bang-off-bang as rho -> 0."""
    if not rho > 0.0:
        raise ValueError("smoothing parameter must be positive")
    return float(logistic_throttle_kernel(float(S), float(rho)))


def _costate_array(lambda0) -> np.ndarray:
    if isinstance(lambda0, FullCostate):
        return lambda0.array()
    lam = np.asarray(lambda0, dtype=float).ravel()
    if lam.size != 7:
        raise ValueError(f"initial costate needs 7 components, got {lam.size}")
    return lam


def _target(scenario: Scenario) -> np.ndarray:
    return np.concatenate([scenario.rf, scenario.vf, [0.0]])


def shooting_residual(lambda0, rho: float, scenario: Scenario, h_max: Optional[float] = None) -> np.ndarray:
    """Terminal miss ``[r(tf) - rf, v(tf) - vf, lambda_m(tf)]`` for an initial costate.

    ``rho > 0`` integrates the smoothed problem on an even grid; ``rho = 0``
    uses the exact throttle law with switching detection.
    """
    if rho < 0.0:
        raise ValueError("smoothing parameter must be non-negative")
    lam = _costate_array(lambda0)
    h_max = default_h_max(scenario) if h_max is None else h_max
    Z0 = np.concatenate([scenario.x0, lam])
    if rho > 0.0:
        n = max(1, int(round(scenario.duration / h_max)))
        p = np.array([scenario.thrust_max, scenario.exhaust_velocity, rho])
        Zf = full_smoothed_final(Z0, scenario.t0, scenario.tf, n, p)
        if not np.all(np.isfinite(Zf)):
            raise PropagationError("mass depleted")
        Y = np.concatenate([Zf[0:6], Zf[13:14]])
    else:
        Y = propagate_full(Z0, scenario, h_max).terminal_output
    return Y - _target(scenario)


@dataclass
class NewtonReport:
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


def _fd_jacobian(fun, x, F0, rel=1e-7, central=False):
    J = np.empty((F0.size, x.size))
    for j in range(x.size):
        d = rel * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] += d
        if central:
            xm = x.copy()
            xm[j] -= d
            J[:, j] = (fun(xp) - fun(xm)) / (2.0 * d)
        else:
            J[:, j] = (fun(xp) - F0) / d
    return J


def _safe(fun):
    def wrapped(x):
        try:
            F = fun(x)
        except (PropagationError, SwitchDetectionError, DegeneratePrimerError):
            return np.full(7, np.nan)
        return F
    return wrapped


def damped_newton(fun: Callable, x0, tol: float = RESIDUAL_TOL, max_iter: int = MAX_NEWTON,
                  central: bool = False, rel_step: float = 1e-7) -> NewtonReport:
    """Newton iteration on ``fun(x) = 0`` with a finite-difference Jacobian.

    The step is halved (up to 30 times) until the residual norm decreases.
    Evaluation failures count as an increase.
    """
    fun = _safe(fun)
    x = np.asarray(x0, dtype=float).copy()
    F = fun(x)
    nF = float(np.linalg.norm(F))
    if not np.isfinite(nF):
        return NewtonReport(x, np.inf, 0, False)
    for it in range(max_iter):
        if nF <= tol:
            return NewtonReport(x, nF, it, True)
        J = _fd_jacobian(fun, x, F, rel_step, central)
        if not np.all(np.isfinite(J)):
            return NewtonReport(x, nF, it, False)
        dx = np.linalg.lstsq(J, -F, rcond=None)[0]
        a = 1.0
        for _ in range(MAX_HALVINGS):
            xn = x + a * dx
            Fn = fun(xn)
            nn = float(np.linalg.norm(Fn))
            if np.isfinite(nn) and nn < nF:
                break
            a *= 0.5
        else:
            return NewtonReport(x, nF, it, False)
        x, F, nF = xn, Fn, nn
    return NewtonReport(x, nF, max_iter, nF <= tol)


def polish(fun: Callable, x0, tol: float = RESIDUAL_TOL) -> NewtonReport:
    """Solve the exact-throttle shooting problem from ``x0``.

    Central-difference Newton first; if it stalls, MINPACK's hybrid method,
    whose Broyden updates cope better with the ill-conditioned Jacobians
    that appear when a thrust or coast arc is very short.
    """
    rep = damped_newton(fun, x0, tol, central=True)
    if rep.converged:
        return rep
    safe = _safe(fun)
    x0 = np.asarray(x0, dtype=float)
    sol = root(safe, x0, method="hybr", options={"xtol": 1e-14, "maxfev": 200 * (x0.size + 1)})
    nF = float(np.linalg.norm(safe(sol.x)))
    if not np.isfinite(nF):
        return rep
    log.info("hybrid fallback: |F| = %.3g after %d evaluations", nF, sol.nfev)
    return NewtonReport(sol.x, nF, rep.iterations + sol.nfev, nF <= tol)


@dataclass
class NominalSolution:
    """Converged fuel-optimal trajectory and its initial costate."""

    lambda0: FullCostate
    trajectory: SegmentedTrajectory
    residual_norm: float
    rho_path: list = field(default_factory=list)

    @property
    def switch_times(self) -> list:
        return list(self.trajectory.switch_times)

    @property
    def final_mass(self) -> float:
        return self.trajectory.final_mass

    @property
    def n_thrust_segments(self) -> int:
        return self.trajectory.n_thrust

    @property
    def n_coast_segments(self) -> int:
        return self.trajectory.n_coast

    @property
    def n_segments(self) -> int:
        return self.trajectory.n_segments

    @property
    def lambda_m0(self) -> float:
        return self.lambda0.lambda_m

    def control_samples(self):
        """Node times and primer vectors with segment-boundary duplicates removed."""
        t, _, U, _ = self.trajectory.stacked()
        t_u, idx = np.unique(t, return_index=True)
        return t_u, U[idx]

    def fit_control(self, order: int = DEFAULT_ORDER, bmap: Optional[BasisMap] = None,
                    rcond: Optional[float] = FIT_RCOND):
        """Least-squares Fourier weights reproducing the nominal primer vector."""
        t, U = self.control_samples()
        bmap = bmap or BasisMap(t[0], t[-1])
        return fit_weights_least_squares(t, U, order, bmap, rcond=rcond), bmap


def _restart_guess(rng: np.random.Generator) -> np.ndarray:
    lam = np.zeros(7)
    for sl in (slice(0, 3), slice(3, 6)):
        v = rng.normal(size=3)
        lam[sl] = 0.1 * v / np.linalg.norm(v)
    return lam


def _count_throttle_arcs(lam, scenario, h_max) -> int:
    try:
        return propagate_full(np.concatenate([scenario.x0, lam]), scenario, h_max).n_segments
    except (PropagationError, SwitchDetectionError, DegeneratePrimerError):
        return -1


def _continuation(scenario, lam, schedule, h_max, max_inserts=6):
    """Walk the smoothing schedule, inserting geometric midpoints on failure."""
    path = []
    pending = list(schedule)
    rho_done = None
    inserts = 0
    while pending:
        rho = pending[0]
        rep = damped_newton(lambda x: shooting_residual(x, rho, scenario, h_max), lam)
        log.info("rho=%.3g converged=%s iters=%d |F|=%.3g", rho, rep.converged, rep.iterations, rep.residual_norm)
        if rep.converged:
            lam = rep.x
            rho_done = rho
            path.append(rho)
            pending.pop(0)
            continue
        if rho_done is None or inserts >= max_inserts:
            raise ConvergenceError(f"smoothing stage rho={rho:.3g} did not converge")
        pending.insert(0, float(np.sqrt(rho_done * rho)))
        inserts += 1
    return lam, path


def solve_fuel_optimal(scenario: Scenario, lambda_guess=None, seed: int = 0,
                       schedule: Sequence[float] = RHO_SCHEDULE, restarts: int = 20,
                       h_max: Optional[float] = None, tol: float = RESIDUAL_TOL) -> NominalSolution:
    """Solve the fixed-time fuel-optimal rendezvous.

    With ``lambda_guess`` the exact problem is attempted directly first (a
    warm start for nearby scenarios); otherwise, or on failure, the full
    smoothing continuation runs, seeded by the guess and then by random
    restarts.
    """
    h_max = default_h_max(scenario) if h_max is None else h_max

    def exact(x):
        return shooting_residual(x, 0.0, scenario, h_max)

    if lambda_guess is not None:
        guess = _costate_array(lambda_guess)
        rep = polish(exact, guess, tol)
        if rep.converged:
            traj = propagate_full(np.concatenate([scenario.x0, rep.x]), scenario, h_max)
            return NominalSolution(FullCostate.from_array(rep.x), traj, rep.residual_norm, [0.0])

    rng = np.random.default_rng(seed)
    seeds = [] if lambda_guess is None else [_costate_array(lambda_guess)]
    seeds += [_restart_guess(rng) for _ in range(restarts)]
    first = schedule[0]
    for k, lam in enumerate(seeds):
        rep = damped_newton(lambda x: shooting_residual(x, first, scenario, h_max), lam)
        log.info("restart %d at rho=%.3g converged=%s", k, first, rep.converged)
        if rep.converged:
            break
    else:
        raise ConvergenceError(f"no convergence at rho={first:.3g} after {len(seeds)} starts")

    lam, path = _continuation(scenario, rep.x, schedule, h_max)
    n_smooth = _count_throttle_arcs(lam, scenario, h_max)
    rep = polish(exact, lam, tol)
    if not rep.converged:
        raise ConvergenceError(f"exact-throttle polish stalled at |F| = {rep.residual_norm:.3g}")
    traj = propagate_full(np.concatenate([scenario.x0, rep.x]), scenario, h_max)
    if n_smooth > 0 and abs(traj.n_segments - n_smooth) > 2:
        raise ConvergenceError(
            f"polish changed the segment count from {n_smooth} to {traj.n_segments}")
    return NominalSolution(FullCostate.from_array(rep.x), traj, rep.residual_norm, path + [0.0])


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_nominal(path, sol: NominalSolution, **extra) -> None:
    t, X, U, u = sol.trajectory.stacked()
    lam_r = np.concatenate([s.node_lambda_r for s in sol.trajectory.segments])
    doc = {
        "lambda0": sol.lambda0.array().tolist(),
        "switch_times": sol.switch_times,
        "final_mass": sol.final_mass,
        "n_thrust_segments": sol.n_thrust_segments,
        "n_coast_segments": sol.n_coast_segments,
        "residual_norm": sol.residual_norm,
        "rho_path": sol.rho_path,
        "h_max": sol.trajectory.h_max,
        "nodes": {
            "t": t.tolist(),
            "x": X[:, 0:7].tolist(),
            "lambda": np.column_stack([lam_r, U, X[:, 7]]).tolist(),
            "u": u.tolist(),
        },
    }
    doc.update(extra)
    Path(path).write_text(json.dumps(doc))


def load_nominal(path, scenario: Scenario) -> NominalSolution:
    """Rebuild a solution from its stored costate by re-propagation."""
    doc = json.loads(Path(path).read_text())
    lam = np.asarray(doc["lambda0"], dtype=float)
    h_max = float(doc.get("h_max", default_h_max(scenario)))
    traj = propagate_full(np.concatenate([scenario.x0, lam]), scenario, h_max)
    res = float(np.linalg.norm(traj.terminal_output - _target(scenario)))
    return NominalSolution(FullCostate.from_array(lam), traj, res, list(doc.get("rho_path", [])))
