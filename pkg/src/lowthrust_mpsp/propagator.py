"""Fixed-step RK4 propagation with switching-time detection.

A trajectory is built segment by segment.  Within a segment the throttle is
frozen; the integrator marches with steps of at most ``h_max`` while
watching the sign of the switching function.  When it flips, the crossing
is bracketed by bisection, the closed segment is re-integrated on an even
grid of ``N = ceil(duration / h_max)`` steps, and the switch time is
polished with Newton corrections on that even grid so that the recorded
state satisfies ``|S| <= 1e-12``.

The event machinery below is written once against two callables,
``step(t, X, h, u, p)`` and ``switch(t, X, p) -> (S, dS/dt)``.  It is
compiled with numba for the Fourier-control and full-costate systems and
run as plain Python for arbitrary control callables.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit

from .dynamics import (
    aug_rhs_kernel,
    augmented_rhs,
    full_rhs_kernel,
    logistic_throttle_kernel,
    norm3,
    switch_rate_kernel,
    switching_kernel,
    thrust_angles_array,
)
from .fourier import BasisMap, FourierWeights, control_at, control_kernel

SWITCH_TOL = 1e-12
N_SWITCH_MAX = 50
H_MAX_FRACTION = 0.0005


class PropagationError(RuntimeError):
    """Trajectory cannot be completed (mass depletion, chattering)."""


class SwitchDetectionError(RuntimeError):
    """Bisection preconditions violated or bracket collapsed."""


def default_h_max(scenario) -> float:
    return H_MAX_FRACTION * scenario.tf


# ---------------------------------------------------------------------------
# system kernels: augmented state with Fourier primer control
#   p = [Tmax, c, t0, tf, eta0, etaf, K, eps...]
# ---------------------------------------------------------------------------


@njit(cache=True)
def aug_step_kernel(t, X, h, u, p):
    K = int(p[6])
    bmap = p[2:6]
    eps = p[7:]
    tmax = p[0]
    c = p[1]
    U1, _ = control_kernel(t, eps, K, bmap)
    U2, _ = control_kernel(t + 0.5 * h, eps, K, bmap)
    U4, _ = control_kernel(t + h, eps, K, bmap)
    k1 = aug_rhs_kernel(X, U1, u, tmax, c)
    k2 = aug_rhs_kernel(X + 0.5 * h * k1, U2, u, tmax, c)
    k3 = aug_rhs_kernel(X + 0.5 * h * k2, U2, u, tmax, c)
    k4 = aug_rhs_kernel(X + h * k3, U4, u, tmax, c)
    return X + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def aug_switch_kernel(t, X, p):
    U, Ud = control_kernel(t, p[7:], int(p[6]), p[2:6])
    c = p[1]
    S = switching_kernel(X[6], U, X[7], c)
    if norm3(U) > 0.0:
        Sd = switch_rate_kernel(X[6], U, Ud, c)
    else:
        Sd = 0.0
    return S, Sd


def aug_params(w: FourierWeights, bmap: BasisMap, thrust_max: float, c: float) -> np.ndarray:
    return np.concatenate([[thrust_max, c], bmap.params(), [float(w.order)], w.eps])


# ---------------------------------------------------------------------------
# system kernels: full state/costate (indirect shooting)
#   p = [Tmax, c, rho]; rho > 0 selects the logistic throttle, otherwise the
#   throttle argument u is used as given.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _full_throttle(Z, u, p):
    if p[2] > 0.0:
        S = switching_kernel(Z[6], Z[10:13], Z[13], p[1])
        return logistic_throttle_kernel(S, p[2])
    return u


@njit(cache=True)
def full_step_kernel(t, Z, h, u, p):
    tmax = p[0]
    c = p[1]
    k1 = full_rhs_kernel(Z, _full_throttle(Z, u, p), tmax, c)
    Z2 = Z + 0.5 * h * k1
    k2 = full_rhs_kernel(Z2, _full_throttle(Z2, u, p), tmax, c)
    Z3 = Z + 0.5 * h * k2
    k3 = full_rhs_kernel(Z3, _full_throttle(Z3, u, p), tmax, c)
    Z4 = Z + h * k3
    k4 = full_rhs_kernel(Z4, _full_throttle(Z4, u, p), tmax, c)
    return Z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def full_switch_kernel(t, Z, p):
    U = Z[10:13]
    S = switching_kernel(Z[6], U, Z[13], p[1])
    if norm3(U) > 0.0:
        Sd = switch_rate_kernel(Z[6], U, -Z[7:10], p[1])
    else:
        Sd = 0.0
    return S, Sd


@njit(cache=True)
def full_smoothed_final(Z0, t0, tf, n_steps, p):
    """Propagate the smoothed full system over n_steps even steps; return Z(tf)."""
    h = (tf - t0) / n_steps
    Z = Z0.copy()
    for i in range(n_steps):
        Z = full_step_kernel(t0 + i * h, Z, h, 0.0, p)
        if not Z[6] > 0.0:
            Z[:] = np.nan
            return Z
    return Z


# ---------------------------------------------------------------------------
# generic event machinery (plain Python; compiled copies below, uncached
# because numba cannot pickle signatures that take functions as arguments)
# ---------------------------------------------------------------------------


def _march(step, switch, t, X, t_end, h_max, u, p):
    """March until t_end or a wrong-signed switching function.

    A sign excursion that starts and ends between two nodes is caught by
    locating the extremum of S wherever dS/dt turns back inside a step.

    Returns (status, t_lo, X_lo, t_hi, X_hi): status 0 reached t_end,
    1 sign change inside (t_lo, t_hi], 2 mass depleted.
    """
    sigma = 1.0 if u > 0.5 else -1.0
    t_lo = t
    X_lo = X
    _, Sd_lo = switch(t_lo, X_lo, p)
    while t_end - t_lo > 1e-14 * max(1.0, abs(t_end)):
        h = min(h_max, t_end - t_lo)
        t_hi = t_lo + h
        if t_end - t_hi < 1e-12 * h_max:
            t_hi = t_end
            h = t_end - t_lo
        X_hi = step(t_lo, X_lo, h, u, p)
        if not X_hi[6] > 0.0:
            return 2, t_lo, X_lo, t_hi, X_hi
        S, Sd = switch(t_hi, X_hi, p)
        if sigma * S > 0.0:
            return 1, t_lo, X_lo, t_hi, X_hi
        if sigma * Sd_lo > 0.0 and sigma * Sd < 0.0:
            # S turned back inside the step: check for a crossing pair between nodes
            a = t_lo
            b = t_hi
            for _ in range(60):
                mid = 0.5 * (a + b)
                _, Sd_m = switch(mid, step(t_lo, X_lo, mid - t_lo, u, p), p)
                if sigma * Sd_m > 0.0:
                    a = mid
                else:
                    b = mid
            X_ext = step(t_lo, X_lo, a - t_lo, u, p)
            S_ext, _ = switch(a, X_ext, p)
            if sigma * S_ext > 0.0 and a > t_lo:
                return 1, t_lo, X_lo, a, X_ext
        t_lo = t_hi
        X_lo = X_hi
        Sd_lo = Sd
    return 0, t_lo, X_lo, t_end, X_lo


def _bisect(step, switch, t_lo, X_lo, t_hi, u, p, tol):
    """Earliest zero of S in [t_lo, t_hi]; states from one partial step off X_lo.

    Returns (t_sw, flag) with flag 0 ok, 1 no sign change, 2 stagnation.
    """
    sigma = 1.0 if u > 0.5 else -1.0
    S_lo, _ = switch(t_lo, X_lo, p)
    X_hi = step(t_lo, X_lo, t_hi - t_lo, u, p)
    S_hi, _ = switch(t_hi, X_hi, p)
    if abs(S_hi) <= tol:
        return t_hi, 0
    if not (sigma * S_hi > 0.0 and sigma * S_lo <= tol):
        return t_lo, 1
    a = t_lo
    b = t_hi
    for _ in range(400):
        mid = 0.5 * (a + b)
        Xm = step(t_lo, X_lo, mid - t_lo, u, p)
        S, _ = switch(mid, Xm, p)
        if abs(S) <= tol and mid > t_lo:
            return mid, 0
        if sigma * S > 0.0:
            b = mid
        else:
            a = mid
        if b - a <= 4.0 * 2.220446049250313e-16 * max(1.0, abs(b)):
            return b, 2
    return b, 2


def _integrate_even(step, t_a, X_a, t_b, n, u, p):
    times = np.empty(n + 1)
    states = np.empty((n + 1, X_a.shape[0]))
    h = (t_b - t_a) / n
    states[0] = X_a
    times[0] = t_a
    X = X_a
    for i in range(n):
        X = step(t_a + i * h, X, h, u, p)
        states[i + 1] = X
        times[i + 1] = t_a + (i + 1) * h
    times[n] = t_b
    return times, states


def _make_close_segment(integrate_even):
    def _close_segment(step, switch, t_a, X_a, t_sw, n, u, p, h_max):
        """Even-grid re-integration to the switch, with Newton polish of t_sw."""
        times, states = integrate_even(step, t_a, X_a, t_sw, n, u, p)
        for _ in range(8):
            S, Sd = switch(t_sw, states[n], p)
            if Sd == 0.0:
                break
            dt = -S / Sd
            if abs(dt) > 0.5 * h_max or t_sw + dt <= t_a:
                break
            if abs(dt) <= 2.0 * 2.220446049250313e-16 * max(1.0, abs(t_sw)):
                break
            t_sw = t_sw + dt
            times, states = integrate_even(step, t_a, X_a, t_sw, n, u, p)
        return t_sw, times, states

    return _close_segment


_march_jit = njit(_march)
_bisect_jit = njit(_bisect)
_integrate_even_jit = njit(_integrate_even)
_close_segment = _make_close_segment(_integrate_even)
_close_segment_jit = njit(_make_close_segment(_integrate_even_jit))


@dataclass
class _Machinery:
    step: Callable
    switch: Callable
    p: object
    compiled: bool

    def march(self, *a):
        return (_march_jit if self.compiled else _march)(self.step, self.switch, *a, self.p)

    def bisect(self, t_lo, X_lo, t_hi, u, tol):
        f = _bisect_jit if self.compiled else _bisect
        return f(self.step, self.switch, t_lo, X_lo, t_hi, u, self.p, tol)

    def integrate_even(self, t_a, X_a, t_b, n, u):
        f = _integrate_even_jit if self.compiled else _integrate_even
        return f(self.step, t_a, X_a, t_b, n, u, self.p)

    def close_segment(self, t_a, X_a, t_sw, n, u, h_max):
        f = _close_segment_jit if self.compiled else _close_segment
        return f(self.step, self.switch, t_a, X_a, t_sw, n, u, self.p, h_max)


def _n_steps(duration: float, h_max: float) -> int:
    return max(1, int(math.ceil(duration / h_max * (1.0 - 1e-12))))


def _initial_throttle(S: float, Sd: float) -> int:
    if S > 0.0:
        return 0
    if S < 0.0:
        return 1
    return 1 if Sd < 0.0 else 0


def _propagate_events(mach: _Machinery, X0, t0, tf, h_max, max_switches=N_SWITCH_MAX):
    """Return a list of (u, times, states) segments covering [t0, tf]."""
    X = np.asarray(X0, dtype=float).copy()
    if not X[6] > 0.0:
        raise PropagationError("non-positive initial mass")
    S0, Sd0 = mach.switch(t0, X, mach.p)
    u = _initial_throttle(S0, Sd0)
    t = t0
    raw = []
    while True:
        status, t_lo, X_lo, t_hi, _ = mach.march(t, X, tf, h_max, float(u))
        if status == 2:
            raise PropagationError(f"mass depleted near t = {t_hi:.6g}")
        if status == 0:
            n = _n_steps(tf - t, h_max)
            times, states = mach.integrate_even(t, X, tf, n, float(u))
            if not np.all(states[:, 6] > 0.0):
                raise PropagationError("mass depleted")
            raw.append((u, times, states))
            return raw
        t_sw, flag = mach.bisect(t_lo, X_lo, t_hi, float(u), SWITCH_TOL)
        if flag == 1:
            raise SwitchDetectionError("no sign change in bracket")
        n = _n_steps(t_sw - t, h_max)
        t_sw, times, states = mach.close_segment(t, X, t_sw, n, float(u), h_max)
        if not np.all(states[:, 6] > 0.0):
            raise PropagationError("mass depleted")
        raw.append((u, times, states))
        if len(raw) > max_switches:
            raise PropagationError(f"more than {max_switches} switches (chattering)")
        u = 1 - u
        t = t_sw
        X = states[-1].copy()


# ---------------------------------------------------------------------------
# trajectory containers
# ---------------------------------------------------------------------------


@dataclass
class TrajectorySegment:
    u: int
    node_times: np.ndarray
    node_states: np.ndarray  # (N+1, 8) augmented states
    node_controls: np.ndarray  # (N+1, 3) primer vector
    node_lambda_r: Optional[np.ndarray] = None  # (N+1, 3), indirect solutions only

    @property
    def t_start(self) -> float:
        return float(self.node_times[0])

    @property
    def t_end(self) -> float:
        return float(self.node_times[-1])

    @property
    def n_steps(self) -> int:
        return len(self.node_times) - 1

    @property
    def step(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass
class SegmentedTrajectory:
    segments: list
    exhaust_velocity: float
    thrust_max: float
    h_max: float
    switch_times: list = field(default_factory=list)

    def __post_init__(self):
        self.switch_times = [seg.t_start for seg in self.segments[1:]]

    @property
    def final_state(self) -> np.ndarray:
        return self.segments[-1].node_states[-1]

    @property
    def initial_state(self) -> np.ndarray:
        return self.segments[0].node_states[0]

    @property
    def terminal_output(self) -> np.ndarray:
        """Y = [r(tf), v(tf), lambda_m(tf)]."""
        X = self.final_state
        return np.concatenate([X[0:6], X[7:8]])

    @property
    def fuel_used(self) -> float:
        return float(self.initial_state[6] - self.final_state[6])

    @property
    def final_mass(self) -> float:
        return float(self.final_state[6])

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def n_thrust(self) -> int:
        return sum(1 for s in self.segments if s.u == 1)

    @property
    def n_coast(self) -> int:
        return sum(1 for s in self.segments if s.u == 0)

    @property
    def thrust_time(self) -> float:
        return sum(s.duration for s in self.segments if s.u == 1)

    def throttle_sequence(self) -> list:
        return [s.u for s in self.segments]

    def stacked(self):
        """Concatenate segments; boundary nodes appear once per adjacent segment.

        Returns (t, X, U, u) arrays.
        """
        t = np.concatenate([s.node_times for s in self.segments])
        X = np.concatenate([s.node_states for s in self.segments])
        U = np.concatenate([s.node_controls for s in self.segments])
        u = np.concatenate([np.full(len(s.node_times), s.u) for s in self.segments])
        return t, X, U, u

    def switching_values(self):
        t, X, U, u = self.stacked()
        S = 1.0 - X[:, 7] - np.linalg.norm(U, axis=1) * self.exhaust_velocity / X[:, 6]
        return t, S, u


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


class FourierControl:
    """Primer control U(t) = P(eta(t)) eps, usable by the compiled propagator."""

    def __init__(self, weights: FourierWeights, bmap: BasisMap):
        self.weights = weights
        self.bmap = bmap

    def __call__(self, t):
        U = control_at(t, self.weights, self.bmap)
        return U


def _as_control_pair(control_fn):
    """Wrap a callable returning U or (U, Udot) into t -> (U, Udot)."""
    def pair(t):
        out = control_fn(t)
        if isinstance(out, tuple):
            return np.asarray(out[0], dtype=float), np.asarray(out[1], dtype=float)
        U = np.asarray(out, dtype=float)
        dt = 1e-6
        Ud = (np.asarray(control_fn(t + dt), dtype=float) - np.asarray(control_fn(t - dt), dtype=float)) / (2 * dt)
        return U, Ud
    return pair


def rk4_step(t, X, control_fn, u, h, scenario) -> np.ndarray:
    """One classical RK4 step of the augmented dynamics with throttle held at u."""
    if not h > 0.0:
        raise ValueError("step must be positive")
    X = np.asarray(X, dtype=float)
    pair = _as_control_pair(control_fn)

    def U(s):
        return pair(s)[0]

    k1 = augmented_rhs(t, X, U(t), u, scenario)
    k2 = augmented_rhs(t + h / 2, X + h / 2 * k1, U(t + h / 2), u, scenario)
    k3 = augmented_rhs(t + h / 2, X + h / 2 * k2, U(t + h / 2), u, scenario)
    k4 = augmented_rhs(t + h, X + h * k3, U(t + h), u, scenario)
    return X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _python_machinery(control_fn, scenario) -> _Machinery:
    pair = _as_control_pair(control_fn)
    tmax, c = scenario.thrust_max, scenario.exhaust_velocity

    def step(t, X, h, u, p):
        if h == 0.0:
            return X.copy()
        U1, _ = pair(t)
        U2, _ = pair(t + 0.5 * h)
        U4, _ = pair(t + h)
        k1 = aug_rhs_kernel(X, U1, u, tmax, c)
        k2 = aug_rhs_kernel(X + 0.5 * h * k1, U2, u, tmax, c)
        k3 = aug_rhs_kernel(X + 0.5 * h * k2, U2, u, tmax, c)
        k4 = aug_rhs_kernel(X + h * k3, U4, u, tmax, c)
        return X + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def switch(t, X, p):
        U, Ud = pair(t)
        S = 1.0 - X[7] - np.linalg.norm(U) * c / X[6]
        Un = np.linalg.norm(U)
        Sd = -(U @ Ud) / Un * c / X[6] if Un > 0 else 0.0
        return S, Sd

    return _Machinery(step, switch, None, compiled=False)


def _machinery(control, scenario) -> _Machinery:
    if isinstance(control, FourierControl):
        p = aug_params(control.weights, control.bmap, scenario.thrust_max, scenario.exhaust_velocity)
        return _Machinery(aug_step_kernel, aug_switch_kernel, p, compiled=True)
    return _python_machinery(control, scenario)


def detect_switch(t_lo, t_hi, X_lo, control, u, scenario, tol=SWITCH_TOL) -> float:
    """Bisect for the switching time inside [t_lo, t_hi] under fixed throttle u."""
    mach = _machinery(control, scenario)
    t_sw, flag = mach.bisect(float(t_lo), np.asarray(X_lo, dtype=float), float(t_hi), float(u), tol)
    if flag == 1:
        raise SwitchDetectionError("no sign change in bracket")
    if flag == 2:
        raise SwitchDetectionError("bisection stagnation: bracket below machine resolution")
    return float(t_sw)


def _controls_at_nodes(control, times) -> np.ndarray:
    if isinstance(control, FourierControl):
        return control_at(times, control.weights, control.bmap)
    pair = _as_control_pair(control)
    return np.array([pair(t)[0] for t in times])


def propagate_segmented(X0, control, scenario, h_max=None, t0=None, tf=None,
                        max_switches=N_SWITCH_MAX) -> SegmentedTrajectory:
    """Propagate the augmented state from t0 to tf under a primer control.

    ``control`` is a :class:`FourierControl` (compiled path) or any callable
    ``t -> U`` / ``t -> (U, Udot)``.
    """
    h_max = default_h_max(scenario) if h_max is None else h_max
    t0 = scenario.t0 if t0 is None else t0
    tf = scenario.tf if tf is None else tf
    mach = _machinery(control, scenario)
    raw = _propagate_events(mach, X0, t0, tf, h_max, max_switches)
    segments = [
        TrajectorySegment(u, times, states, _controls_at_nodes(control, times))
        for u, times, states in raw
    ]
    return SegmentedTrajectory(segments, scenario.exhaust_velocity, scenario.thrust_max, h_max)


def full_machinery(scenario, rho: float = 0.0) -> _Machinery:
    p = np.array([scenario.thrust_max, scenario.exhaust_velocity, rho])
    return _Machinery(full_step_kernel, full_switch_kernel, p, compiled=True)


def propagate_full(Z0, scenario, h_max=None, max_switches=N_SWITCH_MAX) -> SegmentedTrajectory:
    """Bang-off-bang propagation of state and full costate (indirect method)."""
    h_max = default_h_max(scenario) if h_max is None else h_max
    raw = _propagate_events(full_machinery(scenario), Z0, scenario.t0, scenario.tf, h_max, max_switches)
    segments = []
    for u, times, Z in raw:
        aug = np.concatenate([Z[:, 0:7], Z[:, 13:14]], axis=1)
        segments.append(TrajectorySegment(u, times, aug, Z[:, 10:13].copy(), Z[:, 7:10].copy()))
    return SegmentedTrajectory(segments, scenario.exhaust_velocity, scenario.thrust_max, h_max)


CSV_COLUMNS = ["t_TU", "x_LU", "y_LU", "z_LU", "vx_VU", "vy_VU", "vz_VU", "m_MU",
               "lambda_m", "u", "S", "alpha_deg", "beta_deg"]


def trajectory_rows(traj: SegmentedTrajectory) -> np.ndarray:
    t, X, U, u = traj.stacked()
    _, S, _ = traj.switching_values()
    alpha, beta = thrust_angles_array(U)
    return np.column_stack([t, X[:, 0:8], u, S, alpha, beta])


def write_trajectory_csv(traj: SegmentedTrajectory, path, header: dict | None = None) -> None:
    """One row per node; segment boundaries appear twice (pre/post throttle)."""
    rows = trajectory_rows(traj)
    with open(path, "w", newline="") as fh:
        for key, val in (header or {}).items():
            fh.write(f"# {key}: {val}\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([f"{v:.17g}" if i != 9 else str(int(v)) for i, v in enumerate(row)])


def read_trajectory_csv(path) -> dict:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    cols = next(reader)
    data = np.array([[float(x) for x in row] for row in reader])
    return {name: data[:, i] for i, name in enumerate(cols)}
