"""Outer-loop boundary-condition continuation around the inner MPSP loop.

When the inner loop cannot reach a perturbed condition ``C_per`` directly,
the target is moved gradually from the reference ``C_ref`` along

    C_tau = (1 - tau) C_ref + tau C_per,

doubling the step ``dtau`` after each success and halving it after each
failure.  A sweep is abandoned once ``dtau <= 0.01``; the allowed change in
segment count is then widened by two and the sweep restarts from the
original weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fourier import BasisMap, FourierWeights
from .mpsp import ConvergenceSpec, InnerLoopResult, NewtonWeights, inner_loop
from .propagator import SegmentedTrajectory
from .units import Scenario

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundaryConditions:
    x0: np.ndarray  # r, v, m
    rf: np.ndarray
    vf: np.ndarray
    thrust_max: float
    exhaust_velocity: float

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).reshape(7)
        if not x0[6] > 0.0:
            raise ValueError("initial mass must be positive")
        if not self.thrust_max > 0.0:
            raise ValueError("thrust_max must be positive")
        if not self.exhaust_velocity > 0.0:
            raise ValueError("exhaust_velocity must be positive")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "rf", np.array(self.rf, dtype=float).reshape(3))
        object.__setattr__(self, "vf", np.array(self.vf, dtype=float).reshape(3))

    @classmethod
    def from_scenario(cls, sc: Scenario) -> "BoundaryConditions":
        return cls(sc.x0, sc.rf, sc.vf, sc.thrust_max, sc.exhaust_velocity)

    def apply(self, sc: Scenario) -> Scenario:
        """The scenario ``sc`` with these boundary and engine values."""
        return sc.replace(r0=self.x0[0:3], v0=self.x0[3:6], m0=float(self.x0[6]),
                          rf=self.rf, vf=self.vf, thrust_max=float(self.thrust_max),
                          exhaust_velocity=float(self.exhaust_velocity))


def blend_conditions(c_ref: BoundaryConditions, c_per: BoundaryConditions, tau: float) -> BoundaryConditions:
    """Componentwise ``(1 - tau) c_ref + tau c_per``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if tau == 0.0:
        return c_ref
    if tau == 1.0:
        return c_per

    def mix(a, b):
        return (1.0 - tau) * a + tau * b

    return BoundaryConditions(
        mix(c_ref.x0, c_per.x0),
        mix(c_ref.rf, c_per.rf),
        mix(c_ref.vf, c_per.vf),
        mix(c_ref.thrust_max, c_per.thrust_max),
        mix(c_ref.exhaust_velocity, c_per.exhaust_velocity),
    )


@dataclass(frozen=True)
class ContinuationSpec:
    dtau0: float = 0.5
    dtau_min: float = 0.01
    seg_tol_step: int = 2


@dataclass
class TraceEntry:
    tau: float
    dtau: float
    n_seg_tol: int
    sign: int
    iterations: int
    reason: str = ""


@dataclass
class GuidanceSolution:
    eps: FourierWeights
    lambda_m0: float
    trajectory: Optional[SegmentedTrajectory]
    total_newton_iterations: int
    continuation_steps: int
    status: str  # "converged" or "failed"
    failure_reason: str = ""
    n_seg_tol: int = 0
    final: Optional[InnerLoopResult] = None
    trace: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def fuel_used(self) -> float:
        return self.trajectory.fuel_used if self.trajectory is not None else float("nan")

    @property
    def continuation_triggered(self) -> bool:
        return self.continuation_steps > 0


def outer_loop(scenario: Scenario, c_per: BoundaryConditions, eps0: FourierWeights, lambda_m0: float,
               bmap: BasisMap, n_seg_ref: int,
               spec: ConvergenceSpec = ConvergenceSpec(),
               weights: NewtonWeights = NewtonWeights(),
               cont: ContinuationSpec = ContinuationSpec(),
               h_max: Optional[float] = None) -> GuidanceSolution:
    """Guide from the reference conditions of ``scenario`` to ``c_per``."""
    c_ref = BoundaryConditions.from_scenario(scenario)
    trace: list = []
    total = 0
    steps = 0

    def run(tau, eps, lm0, n_seg_tol, dtau):
        nonlocal total
        target = blend_conditions(c_ref, c_per, tau).apply(scenario)
        res = inner_loop(target, eps, lm0, bmap, n_seg_ref, n_seg_tol, weights, spec, h_max)
        total += res.iterations
        trace.append(TraceEntry(tau, dtau, n_seg_tol, res.sign, res.iterations, res.reason))
        log.info("tau=%.4f dtau=%.4f n_seg_tol=%d sign=%d iters=%d %s",
                 tau, dtau, n_seg_tol, res.sign, res.iterations, res.reason)
        return res

    def done(res, n_seg_tol):
        return GuidanceSolution(res.eps, res.lambda_m0, res.trajectory, total, steps, "converged",
                                "", n_seg_tol, res, trace)

    res = run(1.0, eps0, lambda_m0, 0, 0.0)
    if res.sign == 1:
        return done(res, 0)
    last = res

    n_seg_tol = 0
    while True:
        tau_old = 0.0
        dtau = cont.dtau0
        tau = dtau
        eps, lm0 = eps0, lambda_m0
        while True:
            steps += 1
            res = run(tau, eps, lm0, n_seg_tol, dtau)
            if res.sign == 1:
                if tau >= 1.0:
                    return done(res, n_seg_tol)
                eps, lm0, tau_old = res.eps, res.lambda_m0, tau
                dtau = min(1.0 - tau, 2.0 * dtau)
            else:
                last = res
                dtau *= 0.5
                if dtau <= cont.dtau_min:
                    break
            tau = 1.0 if dtau >= 1.0 - tau_old else tau_old + dtau
        n_seg_tol += cont.seg_tol_step
        if n_seg_ref - n_seg_tol < 0:
            return GuidanceSolution(last.eps, last.lambda_m0, last.trajectory, total, steps, "failed",
                                    f"segment tolerance exhausted; last inner failure: {last.reason}",
                                    n_seg_tol, last, trace)
