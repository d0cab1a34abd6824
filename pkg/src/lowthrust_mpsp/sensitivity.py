"""Terminal-output sensitivities of the discretised augmented dynamics.

For a trajectory produced by :func:`propagate_segmented` this module returns

* ``A   = dY / dX0``   (7 x 8), and
* ``B_v = dY / d eps`` (7 x 3(2K+1)),

with ``Y = [r(tf), v(tf), lambda_m(tf)]``.  Both come from one backward sweep
over the RK4 grid.  Each step contributes its analytic Jacobians; at every
switching time the sweep multiplies in the saltation matrix that accounts
for the switching time moving when the state or the control is perturbed:

    dX+ = (I + (Xdot+ - Xdot-) S_X / Sdot) dX-  +  (Xdot+ - Xdot-) S_U / Sdot  dU
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .dynamics import EPS_PRIMER, DegeneratePrimerError, aug_rhs_kernel, gravity_gradient_kernel, norm3
from .fourier import BasisMap, FourierWeights, basis_kernel, control_at, control_kernel
from .propagator import SegmentedTrajectory, aug_params

EPS_GRAZE = 1e-10

OUTPUT_MAP = np.zeros((7, 8))
OUTPUT_MAP[0:6, 0:6] = np.eye(6)
OUTPUT_MAP[6, 7] = 1.0


class GrazingSwitchError(ArithmeticError):
    """|dS/dt| at a switch too small for the first-order jump correction."""


class GridMismatchError(ValueError):
    """Trajectory was not generated by the supplied control weights."""


@dataclass(frozen=True)
class StepJacobians:
    dF_dX: np.ndarray  # (8, 8)
    dF_deps: np.ndarray  # (8, n_eps)


@dataclass(frozen=True)
class JumpJacobians:
    dXplus_dXminus: np.ndarray  # (8, 8)
    dXplus_dU: np.ndarray  # (8, 3)


@dataclass(frozen=True)
class SensitivityBundle:
    A: np.ndarray  # (7, 8)
    B_v: np.ndarray  # (7, n_eps)

    @property
    def lambda_m0_column(self) -> np.ndarray:
        return self.A[:, 7]


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def rhs_jacobians_kernel(X, U, u, tmax, c):
    Fx = np.zeros((8, 8))
    Fu = np.zeros((8, 3))
    G = gravity_gradient_kernel(X[0:3])
    for i in range(3):
        Fx[i, 3 + i] = 1.0
        for j in range(3):
            Fx[3 + i, j] = G[i, j]
    if u != 0.0:
        m = X[6]
        Un = norm3(U)
        if Un < EPS_PRIMER:
            raise DegeneratePrimerError("degenerate primer vector")
        a = u * tmax / m
        for i in range(3):
            Fx[3 + i, 6] = a / m * U[i] / Un
            for j in range(3):
                Fu[3 + i, j] = -a * ((1.0 if i == j else 0.0) / Un - U[i] * U[j] / Un**3)
            Fu[7, i] = -a / m * U[i] / Un
        Fx[7, 6] = 2.0 * u * tmax * Un / m**3
    return Fx, Fu


@njit(cache=True)
def _add_fu_p(out, Fu, hb, nb, scale):
    # out += scale * Fu @ P(eta), P block-diagonal with rows hb
    for ch in range(3):
        for j in range(nb):
            s = scale * hb[j]
            for r in range(8):
                out[r, ch * nb + j] += Fu[r, ch] * s


@njit(cache=True)
def step_jacobians_kernel(t, X, h, u, p, node_held):
    tmax = p[0]
    c = p[1]
    bmap = p[2:6]
    K = int(p[6])
    eps = p[7:]
    nb = 2 * K + 1
    ne = 3 * nb
    rate = (bmap[3] - bmap[2]) / (bmap[1] - bmap[0])

    stage_t = np.array([t, t + 0.5 * h, t + 0.5 * h, t + h])
    coef = np.array([0.0, 0.5 * h, 0.5 * h, h])
    weight = np.array([1.0, 2.0, 2.0, 1.0])

    Phi = np.eye(8)
    Gam = np.zeros((8, ne))
    dK_dX = np.zeros((8, 8))
    dK_de = np.zeros((8, ne))
    Kprev = np.zeros(8)
    U_node, _ = control_kernel(t, eps, K, bmap)
    h_node, _ = basis_kernel(rate * (t - bmap[0]) + bmap[2], K)
    for s in range(4):
        xs = X + coef[s] * Kprev
        if s == 0:
            dxs_dX = np.eye(8)
            dxs_de = np.zeros((8, ne))
        else:
            dxs_dX = np.eye(8) + coef[s] * dK_dX
            dxs_de = coef[s] * dK_de
        if node_held:
            Us = U_node
            hb = h_node
        else:
            Us, _ = control_kernel(stage_t[s], eps, K, bmap)
            hb, _ = basis_kernel(rate * (stage_t[s] - bmap[0]) + bmap[2], K)
        Fx, Fu = rhs_jacobians_kernel(xs, Us, u, tmax, c)
        Kprev = aug_rhs_kernel(xs, Us, u, tmax, c)
        dK_dX = Fx @ dxs_dX
        dK_de = Fx @ dxs_de
        _add_fu_p(dK_de, Fu, hb, nb, 1.0)
        Phi += (h / 6.0) * weight[s] * dK_dX
        Gam += (h / 6.0) * weight[s] * dK_de
    return Phi, Gam


@njit(cache=True)
def jump_kernel(X, U, Ud, u_minus, u_plus, tmax, c):
    """Saltation matrices at a switch; returns (JX, JU, Sdot)."""
    m = X[6]
    Un = norm3(U)
    f_minus = aug_rhs_kernel(X, U, u_minus, tmax, c)
    f_plus = aug_rhs_kernel(X, U, u_plus, tmax, c)
    S_X = np.zeros(8)
    S_X[6] = Un * c / (m * m)
    S_X[7] = -1.0
    S_U = -(c / m) * U / Un
    Sdot = S_U[0] * Ud[0] + S_U[1] * Ud[1] + S_U[2] * Ud[2]
    df = f_plus - f_minus
    JX = np.eye(8)
    JU = np.zeros((8, 3))
    if abs(Sdot) > 0.0:
        for i in range(8):
            for j in range(8):
                JX[i, j] += df[i] * S_X[j] / Sdot
            for j in range(3):
                JU[i, j] = df[i] * S_U[j] / Sdot
    return JX, JU, Sdot


@njit(cache=True)
def accumulate_kernel(times, states, seg_start, seg_u, p, jumps, node_held, Cmap, eps_graze):
    """Backward sweep.  seg_start[k] indexes the first node of segment k in
    the flattened arrays; seg_start[M] = len(times).  Returns (A, Bv, flag)
    with flag 1 for a grazing switch."""
    tmax = p[0]
    c = p[1]
    bmap = p[2:6]
    K = int(p[6])
    eps = p[7:]
    nb = 2 * K + 1
    ne = 3 * nb
    rate = (bmap[3] - bmap[2]) / (bmap[1] - bmap[0])
    M = seg_u.shape[0]
    Lam = Cmap.copy()
    Bv = np.zeros((Cmap.shape[0], ne))
    for k in range(M - 1, -1, -1):
        a = seg_start[k]
        b = seg_start[k + 1] - 1  # last node of segment k
        u = float(seg_u[k])
        for i in range(b - 1, a - 1, -1):
            h = times[i + 1] - times[i]
            Phi, Gam = step_jacobians_kernel(times[i], states[i], h, u, p, node_held)
            Bv += Lam @ Gam
            Lam = Lam @ Phi
        if k > 0 and jumps:
            t_sw = times[a]
            U, Ud = control_kernel(t_sw, eps, K, bmap)
            JX, JU, Sdot = jump_kernel(states[a], U, Ud, float(seg_u[k - 1]), u, tmax, c)
            if abs(Sdot) <= eps_graze:
                return Lam, Bv, 1
            hb, _ = basis_kernel(rate * (t_sw - bmap[0]) + bmap[2], K)
            LJ = Lam @ JU
            for r in range(Lam.shape[0]):
                for ch in range(3):
                    for j in range(nb):
                        Bv[r, ch * nb + j] += LJ[r, ch] * hb[j]
            Lam = Lam @ JX
    return Lam, Bv, 0


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def rhs_jacobians(t, X, U, u, scenario):
    """Continuous-time Jacobians (dF/dX 8x8, dF/dU 8x3) of the augmented dynamics."""
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    if not X[6] > 0.0:
        raise ValueError("mass must be positive")
    if u and np.linalg.norm(U) < EPS_PRIMER:
        raise DegeneratePrimerError("degenerate primer vector")
    return rhs_jacobians_kernel(X, U, float(u), scenario.thrust_max, scenario.exhaust_velocity)


def step_jacobians(t, X, u, w: FourierWeights, bmap: BasisMap, h, scenario, node_held=False) -> StepJacobians:
    """Jacobians of one RK4 step with respect to the node state and the weights."""
    p = aug_params(w, bmap, scenario.thrust_max, scenario.exhaust_velocity)
    Phi, Gam = step_jacobians_kernel(float(t), np.asarray(X, dtype=float), float(h), float(u), p, bool(node_held))
    return StepJacobians(Phi, Gam)


def switching_partials(X, U, c):
    """Row vectors dS/dX (8) and dS/dU (3) of the switching function."""
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    Un = np.linalg.norm(U)
    if Un < EPS_PRIMER:
        raise DegeneratePrimerError("degenerate primer vector")
    m = X[6]
    S_X = np.zeros(8)
    S_X[6] = Un * c / m**2
    S_X[7] = -1.0
    return S_X, -(c / m) * U / Un


def switch_jump_jacobians(Xdot_minus, Xdot_plus, S_X, S_U, Sdot, eps_graze=EPS_GRAZE) -> JumpJacobians:
    if not abs(Sdot) > eps_graze:
        raise GrazingSwitchError(f"grazing switch: |dS/dt| = {abs(Sdot):.3g}")
    df = np.asarray(Xdot_plus, dtype=float) - np.asarray(Xdot_minus, dtype=float)
    JX = np.eye(len(df)) + np.outer(df, S_X) / Sdot
    JU = np.outer(df, S_U) / Sdot
    return JumpJacobians(JX, JU)


def _flatten(traj: SegmentedTrajectory):
    times = np.concatenate([s.node_times for s in traj.segments])
    states = np.ascontiguousarray(np.concatenate([s.node_states for s in traj.segments]))
    lengths = [len(s.node_times) for s in traj.segments]
    seg_start = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    seg_u = np.array([s.u for s in traj.segments], dtype=np.int64)
    return times, states, seg_start, seg_u


def accumulate(traj: SegmentedTrajectory, w: FourierWeights, bmap: BasisMap, scenario,
               jump_compensation: bool = True, node_held: bool = False,
               check_grid: bool = True) -> SensitivityBundle:
    """Backward-recursive sensitivities of Y(tf) for a propagated trajectory."""
    times, states, seg_start, seg_u = _flatten(traj)
    if check_grid:
        U_expected = control_at(times, w, bmap)
        U_stored = np.concatenate([s.node_controls for s in traj.segments])
        scale = max(1.0, np.abs(U_stored).max())
        if np.abs(U_expected - U_stored).max() > 1e-9 * scale:
            raise GridMismatchError("trajectory controls do not match the supplied weights")
    p = aug_params(w, bmap, scenario.thrust_max, scenario.exhaust_velocity)
    A, Bv, flag = accumulate_kernel(times, states, seg_start, seg_u, p, jump_compensation,
                                    node_held, OUTPUT_MAP, EPS_GRAZE)
    if flag == 1:
        raise GrazingSwitchError("grazing switch encountered during sensitivity sweep")
    return SensitivityBundle(A, Bv)
