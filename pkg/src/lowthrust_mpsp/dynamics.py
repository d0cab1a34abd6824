"""Point-wise dynamics: two-body motion with bang-off-bang thrust.

Two state layouts are used throughout the package.

* augmented state ``X = [r(3), v(3), m, lambda_m]`` propagated with the
  primer vector ``U = lambda_v`` supplied externally as the control;
* full state ``Z = [r(3), v(3), m, lambda_r(3), lambda_v(3), lambda_m]``
  used by the indirect (shooting) solver.

The ``*_kernel`` functions are numba-compiled and carry no argument checks;
the plain-named wrappers validate their inputs and are the public API.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

EPS_PRIMER = 1e-12


class DegeneratePrimerError(ArithmeticError):
    """Thrust requested along a (numerically) zero primer vector."""


@dataclass(frozen=True)
class AugmentedState:
    r: np.ndarray
    v: np.ndarray
    m: float
    lambda_m: float

    def __post_init__(self):
        if not self.m > 0.0:
            raise ValueError("mass must be positive")

    def array(self) -> np.ndarray:
        return np.concatenate([self.r, self.v, [self.m, self.lambda_m]]).astype(float)

    @classmethod
    def from_array(cls, X) -> "AugmentedState":
        X = np.asarray(X, dtype=float)
        return cls(X[0:3].copy(), X[3:6].copy(), float(X[6]), float(X[7]))


@dataclass(frozen=True)
class FullCostate:
    lambda_r: np.ndarray
    lambda_v: np.ndarray
    lambda_m: float

    def array(self) -> np.ndarray:
        return np.concatenate([self.lambda_r, self.lambda_v, [self.lambda_m]]).astype(float)

    @classmethod
    def from_array(cls, lam) -> "FullCostate":
        lam = np.asarray(lam, dtype=float)
        if not np.all(np.isfinite(lam)):
            raise ValueError("costate components must be finite")
        return cls(lam[0:3].copy(), lam[3:6].copy(), float(lam[6]))


class ControlValue(NamedTuple):
    U: np.ndarray
    u: int
    S: float


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def norm3(a):
    return np.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


@njit(cache=True)
def gravity_gradient_kernel(r):
    rn = norm3(r)
    rn3 = rn**3
    rn5 = rn3 * rn * rn
    G = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            G[i, j] = 3.0 * r[i] * r[j] / rn5
        G[i, i] -= 1.0 / rn3
    return G


@njit(cache=True)
def switching_kernel(m, U, lam_m, c):
    return -norm3(U) * c / m - lam_m + 1.0


@njit(cache=True)
def switch_rate_kernel(m, U, Udot, c):
    Un = norm3(U)
    return -(U[0] * Udot[0] + U[1] * Udot[1] + U[2] * Udot[2]) / Un * c / m


@njit(cache=True)
def aug_rhs_kernel(X, U, u, tmax, c):
    out = np.zeros(8)
    rn = norm3(X[0:3])
    rn3 = rn**3
    m = X[6]
    for i in range(3):
        out[i] = X[3 + i]
        out[3 + i] = -X[i] / rn3
    if u != 0.0:
        Un = norm3(U)
        if Un < EPS_PRIMER:
            raise DegeneratePrimerError("degenerate primer vector")
        a = u * tmax / (m * Un)
        for i in range(3):
            out[3 + i] -= a * U[i]
        out[6] = -u * tmax / c
        out[7] = -u * tmax * Un / (m * m)
    return out


@njit(cache=True)
def full_rhs_kernel(Z, u, tmax, c):
    out = np.zeros(14)
    r = Z[0:3]
    lam_v = Z[10:13]
    rn = norm3(r)
    rn3 = rn**3
    m = Z[6]
    G = gravity_gradient_kernel(r)
    for i in range(3):
        out[i] = Z[3 + i]
        out[3 + i] = -r[i] / rn3
        out[10 + i] = -Z[7 + i]
        acc = 0.0
        for j in range(3):
            acc += G[j, i] * lam_v[j]
        out[7 + i] = -acc
    if u != 0.0:
        Un = norm3(lam_v)
        if Un < EPS_PRIMER:
            raise DegeneratePrimerError("degenerate primer vector")
        a = u * tmax / (m * Un)
        for i in range(3):
            out[3 + i] -= a * lam_v[i]
        out[6] = -u * tmax / c
        out[13] = -u * tmax * Un / (m * m)
    return out


@njit(cache=True)
def logistic_throttle_kernel(S, rho):
    z = S / rho
    if z > 500.0:
        z = 500.0
    elif z < -500.0:
        z = -500.0
    return 1.0 / (1.0 + np.exp(z))


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def gravity(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return -r / np.linalg.norm(r) ** 3


def gravity_gradient(r) -> np.ndarray:
    """G = d g / d r for g(r) = -r / |r|^3 (mu = 1)."""
    return gravity_gradient_kernel(np.asarray(r, dtype=float))


def switching_function(m: float, U, lambda_m: float, c: float) -> float:
    """S = 1 - lambda_m - |U| c / m.  Thrust is on where S < 0."""
    if not m > 0.0:
        raise ValueError("mass must be positive")
    if not c > 0.0:
        raise ValueError("exhaust velocity must be positive")
    return float(switching_kernel(m, np.asarray(U, dtype=float), lambda_m, c))


def throttle_from_switch(S: float, previous_u: int = 0) -> int:
    """Bang-off-bang throttle; an exact zero keeps the previous value."""
    if S > 0.0:
        return 0
    if S < 0.0:
        return 1
    return int(previous_u)


def augmented_rhs(t, X, U, u, scenario) -> np.ndarray:
    """Time derivative of the augmented state under primer control ``U``."""
    X = np.asarray(X, dtype=float)
    if not X[6] > 0.0:
        raise ValueError("mass must be positive")
    U = np.asarray(U, dtype=float)
    if u and np.linalg.norm(U) < EPS_PRIMER:
        raise DegeneratePrimerError("degenerate primer vector")
    return aug_rhs_kernel(X, U, float(u), scenario.thrust_max, scenario.exhaust_velocity)


def full_rhs(t, x, lam, scenario, previous_u: int = 0):
    """State and costate derivatives under the optimal control law.

    Returns ``(xdot, lamdot)``, each a 7-vector.
    """
    x = np.asarray(x, dtype=float)
    lam = lam.array() if isinstance(lam, FullCostate) else np.asarray(lam, dtype=float)
    if not x[6] > 0.0:
        raise ValueError("mass must be positive")
    c = scenario.exhaust_velocity
    S = switching_function(x[6], lam[3:6], lam[6], c)
    u = throttle_from_switch(S, previous_u)
    if u and np.linalg.norm(lam[3:6]) < EPS_PRIMER:
        raise DegeneratePrimerError("degenerate primer vector")
    dz = full_rhs_kernel(np.concatenate([x, lam]), float(u), scenario.thrust_max, c)
    return dz[:7], dz[7:]


def switch_rate(m: float, U, Udot, c: float) -> float:
    """dS/dt along a trajectory; the mass and mass-costate terms cancel."""
    U = np.asarray(U, dtype=float)
    if np.linalg.norm(U) < EPS_PRIMER:
        raise DegeneratePrimerError("degenerate primer vector")
    return float(switch_rate_kernel(m, U, np.asarray(Udot, dtype=float), c))


def thrust_angles(U) -> tuple[float, float]:
    """In-plane angle in [0, 360) and out-of-plane angle in [-90, 90], degrees."""
    U = np.asarray(U, dtype=float)
    Un = np.linalg.norm(U)
    if Un < EPS_PRIMER:
        raise DegeneratePrimerError("degenerate primer vector")
    if U[0] == 0.0 and U[1] == 0.0:
        raise ValueError("in-plane angle undefined")
    alpha = np.degrees(np.arctan2(U[1], U[0])) % 360.0
    beta = np.degrees(np.arcsin(np.clip(U[2] / Un, -1.0, 1.0)))
    return float(alpha), float(beta)


def thrust_angles_array(U) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`thrust_angles` for an (n, 3) array (no error checks)."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Un = np.linalg.norm(U, axis=1)
    alpha = np.degrees(np.arctan2(U[:, 1], U[:, 0])) % 360.0
    beta = np.degrees(np.arcsin(np.clip(U[:, 2] / np.where(Un > 0, Un, 1.0), -1.0, 1.0)))
    return alpha, beta


def hamiltonian(x, lam, u, scenario) -> float:
    """H = lambda_r.v + lambda_v.g(r) + (u Tmax / c) S (diagnostic)."""
    x = np.asarray(x, dtype=float)
    lam = lam.array() if isinstance(lam, FullCostate) else np.asarray(lam, dtype=float)
    if not x[6] > 0.0:
        raise ValueError("mass must be positive")
    c = scenario.exhaust_velocity
    S = switching_kernel(x[6], lam[3:6], lam[6], c)
    return float(lam[0:3] @ x[3:6] + lam[3:6] @ gravity(x[0:3]) + u * scenario.thrust_max / c * S)
