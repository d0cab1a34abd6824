"""Inner-loop MPSP Newton iteration.

Given Fourier weights ``eps`` for the primer vector and the initial mass
costate ``lambda_m0``, the augmented dynamics are propagated to ``tf`` and the
terminal error ``dY = Y(tf) - Y*`` is linearised as

    dY ~= a d_lambda_m0 + B_v d_eps,

with ``a`` the ``lambda_m0`` column of ``dY/dX0``.  The minimum-norm update
(weighted by ``R_0`` and ``R_eps``) is

    p      = (a R_0^-1 a^T + B_v R_eps^-1 B_v^T)^-1 dY
    d_eps  = R_eps^-1 B_v^T p
    d_lm0  = R_0^-1 a^T p

and is applied with a step length ``kappa`` that is halved whenever the trial
trajectory changes its thrust/coast segment count by more than allowed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import DegeneratePrimerError
from .fourier import BasisMap, FourierWeights
from .propagator import (
    FourierControl,
    PropagationError,
    SegmentedTrajectory,
    SwitchDetectionError,
    default_h_max,
    propagate_segmented,
)
from .sensitivity import GrazingSwitchError, accumulate
from .units import Scenario

log = logging.getLogger(__name__)

COND_MAX = 1e12
MIN_SEGMENT = 1e-9  # TU


class ControlAuthorityError(ArithmeticError):
    """The linearised terminal map is (numerically) rank deficient."""


@dataclass(frozen=True)
class NewtonWeights:
    """Quadratic weights on the parameter update; identity by default."""

    R_eps: Optional[np.ndarray] = None  # None means identity
    R_0: float = 1.0

    def __post_init__(self):
        if not self.R_0 > 0.0:
            raise ValueError("R_0 must be positive")
        if self.R_eps is not None:
            R = np.asarray(self.R_eps, dtype=float)
            if R.ndim != 2 or R.shape[0] != R.shape[1] or not np.allclose(R, R.T):
                raise ValueError("R_eps must be a symmetric square matrix")
            try:
                np.linalg.cholesky(R)
            except np.linalg.LinAlgError:
                raise ValueError("R_eps must be positive definite") from None
            object.__setattr__(self, "R_eps", R)

    def apply_inverse(self, M: np.ndarray) -> np.ndarray:
        """R_eps^-1 M."""
        if self.R_eps is None:
            return M
        return np.linalg.solve(self.R_eps, M)


@dataclass(frozen=True)
class ConvergenceSpec:
    pos_tol: float = 500.0  # km
    vel_tol: float = 0.1  # km/s
    lam_tol: float = 1e-6
    delta_max: float = 1.0  # canonical norm of dY
    kappa_min: float = 1.0 / 2**5
    max_newton_iters: int = 200

    def __post_init__(self):
        for name in ("pos_tol", "vel_tol", "lam_tol", "delta_max", "kappa_min"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be at least 1")


@dataclass(frozen=True)
class TerminalError:
    dY: np.ndarray  # canonical, 7
    pos_km: float
    vel_km_s: float
    lam_m: float

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.dY))

    def within(self, spec: ConvergenceSpec) -> bool:
        return self.pos_km <= spec.pos_tol and self.vel_km_s <= spec.vel_tol and self.lam_m <= spec.lam_tol

    def as_tuple(self):
        return self.pos_km, self.vel_km_s, self.lam_m


@dataclass
class IterationRecord:
    iteration: int
    kappa: float
    error_norm: float
    pos_km: float
    vel_km_s: float
    lam_m: float
    n_seg: int

    def line(self) -> str:
        return (f"it={self.iteration:3d} kappa={self.kappa:.4g} |dY|={self.error_norm:.3e} "
                f"dr={self.pos_km:.4g} km dv={self.vel_km_s:.4g} km/s lam_mf={self.lam_m:.3e} "
                f"N_seg={self.n_seg}")


@dataclass
class InnerLoopResult:
    eps: FourierWeights
    lambda_m0: float
    sign: int  # 1 success, 0 failure
    iterations: int
    terminal_error: Optional[TerminalError]
    trajectory: Optional[SegmentedTrajectory]
    reason: str = ""
    history: list = field(default_factory=list)

    @property
    def fuel_used(self) -> float:
        return self.trajectory.fuel_used if self.trajectory is not None else float("nan")

    @property
    def n_seg(self) -> int:
        return count_segments(self.trajectory) if self.trajectory is not None else 0


def terminal_error(traj: SegmentedTrajectory, target: Scenario) -> TerminalError:
    """``dY = [r(tf) - rf, v(tf) - vf, lambda_m(tf)]`` plus dimensional norms."""
    dY = traj.terminal_output - np.concatenate([target.rf, target.vf, [0.0]])
    u = target.units
    return TerminalError(
        dY,
        float(np.linalg.norm(dY[0:3]) * u.length_unit),
        float(np.linalg.norm(dY[3:6]) * u.velocity_unit),
        float(abs(dY[6])),
    )


def newton_direction(A: np.ndarray, B_v: np.ndarray, dY, weights: NewtonWeights = NewtonWeights()):
    """Minimum-norm correction ``(d_eps, d_lambda_m0, p)`` cancelling ``dY`` to first order."""
    a = np.asarray(A, dtype=float)[:, 7]
    B_v = np.asarray(B_v, dtype=float)
    dY = np.asarray(dY, dtype=float)
    RinvBt = weights.apply_inverse(B_v.T)
    M = np.outer(a, a) / weights.R_0 + B_v @ RinvBt
    cond = np.linalg.cond(M)
    if not cond <= COND_MAX:
        raise ControlAuthorityError(f"insufficient control authority (condition number {cond:.3g})")
    p = np.linalg.solve(M, dY)
    return RinvBt @ p, float(a @ p) / weights.R_0, p


def count_segments(traj: SegmentedTrajectory, min_duration: float = MIN_SEGMENT) -> int:
    """Thrust plus coast segments, ignoring slivers shorter than ``min_duration``."""
    count = 0
    last = None
    for seg in traj.segments:
        if seg.duration < min_duration:
            continue
        if seg.u != last:
            count += 1
            last = seg.u
    return count


def _propagate(scenario: Scenario, w: FourierWeights, bmap: BasisMap, lambda_m0: float, h_max: float):
    X0 = np.concatenate([scenario.x0, [lambda_m0]])
    return propagate_segmented(X0, FourierControl(w, bmap), scenario, h_max)


_RECOVERABLE = (PropagationError, SwitchDetectionError, DegeneratePrimerError)


def inner_loop(target: Scenario, eps: FourierWeights, lambda_m0: float, bmap: BasisMap,
               n_seg_ref: int, n_seg_tol: int = 0,
               weights: NewtonWeights = NewtonWeights(),
               spec: ConvergenceSpec = ConvergenceSpec(),
               h_max: Optional[float] = None) -> InnerLoopResult:
    """Iterate MPSP Newton updates until the terminal tolerances are met.

    ``sign=0`` is returned (never raised) when the error exceeds
    ``delta_max``, when the step length falls to ``kappa_min``, when the
    iteration cap is reached, or when propagation fails.
    """
    h_max = default_h_max(target) if h_max is None else h_max
    history: list = []

    def fail(reason, traj=None, err=None, it=0):
        log.info("inner loop failed: %s", reason)
        return InnerLoopResult(eps, lambda_m0, 0, it, err, traj, reason, history)

    try:
        traj = _propagate(target, eps, bmap, lambda_m0, h_max)
    except _RECOVERABLE as exc:
        return fail(f"propagation failed: {exc}")

    kappa = 1.0
    for it in range(spec.max_newton_iters + 1):
        err = terminal_error(traj, target)
        rec = IterationRecord(it, kappa, err.norm, *err.as_tuple(), count_segments(traj))
        history.append(rec)
        log.debug(rec.line())
        if err.within(spec):
            return InnerLoopResult(eps, lambda_m0, 1, it, err, traj, "", history)
        if it == spec.max_newton_iters:
            return fail("iteration cap reached", traj, err, it)
        if err.norm >= spec.delta_max:
            return fail(f"error norm {err.norm:.3g} >= delta_max", traj, err, it)
        try:
            sens = accumulate(traj, eps, bmap, target, check_grid=False)
            d_eps, d_lm0, _ = newton_direction(sens.A, sens.B_v, err.dY, weights)
        except (GrazingSwitchError, ControlAuthorityError, DegeneratePrimerError) as exc:
            return fail(f"sensitivity failed: {exc}", traj, err, it)

        kappa = 1.0
        while True:
            trial_eps = eps.shifted(-kappa * d_eps)
            trial_lm0 = lambda_m0 - kappa * d_lm0
            try:
                trial = _propagate(target, trial_eps, bmap, trial_lm0, h_max)
                ok = abs(count_segments(trial) - n_seg_ref) <= n_seg_tol
            except _RECOVERABLE:
                ok = False
            if ok:
                break
            kappa *= 0.5
            if kappa <= spec.kappa_min:
                return fail("step length below kappa_min", traj, err, it)
        eps, lambda_m0, traj = trial_eps, trial_lm0, trial
    raise AssertionError("unreachable")
