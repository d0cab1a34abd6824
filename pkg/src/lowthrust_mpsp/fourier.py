"""Fourier-series parameterisation of the primer-vector control.

Each of the three control channels is ``U_i(t) = h(eta(t)) . eps_i`` with

    h(eta) = [1, cos eta, sin eta, cos 2 eta, sin 2 eta, ..., cos K eta, sin K eta]

and ``eta`` an affine map of time.  Weights are stored channel-major in one
flat vector of length ``3 (2K + 1)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit

DEFAULT_ORDER = 15
COND_MAX = 1e12


class WindowError(ValueError):
    """Time outside the basis window."""


class FitError(ValueError):
    """Least-squares initialisation cannot be solved reliably."""


def n_basis(order: int) -> int:
    return 2 * order + 1


@dataclass(frozen=True)
class BasisMap:
    t0: float
    tf: float
    eta0: float = 0.0
    etaf: float = np.pi

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError("basis window needs tf > t0")
        if not self.etaf > self.eta0:
            raise ValueError("basis domain needs etaf > eta0")

    @property
    def rate(self) -> float:
        """d eta / d t."""
        return (self.etaf - self.eta0) / (self.tf - self.t0)

    def params(self) -> np.ndarray:
        return np.array([self.t0, self.tf, self.eta0, self.etaf])


@dataclass(frozen=True)
class FourierWeights:
    order: int
    eps: np.ndarray

    def __post_init__(self):
        eps = np.array(self.eps, dtype=float).ravel()
        if self.order < 0:
            raise ValueError("order must be non-negative")
        if eps.size != 3 * n_basis(self.order):
            raise ValueError(f"expected {3 * n_basis(self.order)} weights for order {self.order}, got {eps.size}")
        if not np.all(np.isfinite(eps)):
            raise ValueError("weights must be finite")
        eps.setflags(write=False)
        object.__setattr__(self, "eps", eps)

    @property
    def size(self) -> int:
        return self.eps.size

    def channels(self) -> np.ndarray:
        """Weights as a (3, 2K+1) array."""
        return self.eps.reshape(3, n_basis(self.order))

    def __add__(self, other: "FourierWeights") -> "FourierWeights":
        return FourierWeights(self.order, self.eps + other.eps)

    def shifted(self, delta) -> "FourierWeights":
        return FourierWeights(self.order, self.eps + np.asarray(delta, dtype=float))

    @classmethod
    def zeros(cls, order: int) -> "FourierWeights":
        return cls(order, np.zeros(3 * n_basis(order)))

    @classmethod
    def constant(cls, order: int, U) -> "FourierWeights":
        eps = np.zeros((3, n_basis(order)))
        eps[:, 0] = U
        return cls(order, eps.ravel())


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def basis_kernel(eta, K):
    h = np.empty(2 * K + 1)
    dh = np.empty(2 * K + 1)
    h[0] = 1.0
    dh[0] = 0.0
    for k in range(1, K + 1):
        ck = np.cos(k * eta)
        sk = np.sin(k * eta)
        h[2 * k - 1] = ck
        h[2 * k] = sk
        dh[2 * k - 1] = -k * sk
        dh[2 * k] = k * ck
    return h, dh


@njit(cache=True)
def control_kernel(t, eps, K, bmap):
    """U and dU/dt at time t; ``bmap = [t0, tf, eta0, etaf]``."""
    rate = (bmap[3] - bmap[2]) / (bmap[1] - bmap[0])
    eta = rate * (t - bmap[0]) + bmap[2]
    h, dh = basis_kernel(eta, K)
    nb = 2 * K + 1
    U = np.zeros(3)
    Ud = np.zeros(3)
    for i in range(3):
        acc = 0.0
        accd = 0.0
        for j in range(nb):
            acc += h[j] * eps[i * nb + j]
            accd += dh[j] * eps[i * nb + j]
        U[i] = acc
        Ud[i] = accd * rate
    return U, Ud


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def basis_vector(eta: float, order: int) -> np.ndarray:
    if order < 0:
        raise ValueError("order must be non-negative")
    return basis_kernel(float(eta), int(order))[0]


def basis_rate_vector(eta: float, order: int) -> np.ndarray:
    """d h / d eta."""
    return basis_kernel(float(eta), int(order))[1]


def _check_window(t, bmap: BasisMap):
    tol = 1e-9 * (bmap.tf - bmap.t0)
    t = np.asarray(t, dtype=float)
    if np.any(t < bmap.t0 - tol) or np.any(t > bmap.tf + tol):
        raise WindowError(f"time outside basis window [{bmap.t0}, {bmap.tf}]")


def eta_of_t(t, bmap: BasisMap):
    _check_window(t, bmap)
    return bmap.rate * (np.asarray(t, dtype=float) - bmap.t0) + bmap.eta0


def basis_matrix(t, order: int, bmap: BasisMap) -> np.ndarray:
    """Rows h(eta(t_j))^T for a vector of times, shape (n, 2K+1)."""
    eta = np.atleast_1d(eta_of_t(t, bmap))
    k = np.arange(1, order + 1)
    H = np.empty((eta.size, n_basis(order)))
    H[:, 0] = 1.0
    H[:, 1::2] = np.cos(np.outer(eta, k))
    H[:, 2::2] = np.sin(np.outer(eta, k))
    return H


def basis_rate_matrix(t, order: int, bmap: BasisMap) -> np.ndarray:
    """Rows d h(eta(t_j)) / d t, shape (n, 2K+1)."""
    eta = np.atleast_1d(eta_of_t(t, bmap))
    k = np.arange(1, order + 1)
    D = np.zeros((eta.size, n_basis(order)))
    D[:, 1::2] = -k * np.sin(np.outer(eta, k))
    D[:, 2::2] = k * np.cos(np.outer(eta, k))
    return D * bmap.rate


def projection_matrix(t: float, order: int, bmap: BasisMap) -> np.ndarray:
    """Block-diagonal P(eta) with U = P eps, shape (3, 3 (2K+1))."""
    h = basis_matrix(t, order, bmap)[0]
    nb = n_basis(order)
    P = np.zeros((3, 3 * nb))
    for i in range(3):
        P[i, i * nb:(i + 1) * nb] = h
    return P


def control_at(t, w: FourierWeights, bmap: BasisMap) -> np.ndarray:
    """U(t); a vector of times gives an (n, 3) array."""
    H = basis_matrix(t, w.order, bmap)
    U = H @ w.channels().T
    return U[0] if np.ndim(t) == 0 else U


def evaluation_error_bound(w: FourierWeights) -> float:
    """First-order bound on the floating-point error of one evaluation of U.

    Each term ``eps_j cos(k eta)`` carries a rounding error of about
    ``machine_eps (1 + k pi) |eps_j|``; large cancelling weights therefore
    limit how closely a switching time can be resolved.
    """
    K = w.order
    k = np.concatenate([[0], np.repeat(np.arange(1, K + 1), 2)])
    terms = np.abs(w.channels()) * (1.0 + k * np.pi)
    return float(np.finfo(float).eps * np.sqrt((terms**2).sum()))


def control_rate_at(t, w: FourierWeights, bmap: BasisMap) -> np.ndarray:
    """dU/dt; a vector of times gives an (n, 3) array."""
    D = basis_rate_matrix(t, w.order, bmap)
    Ud = D @ w.channels().T
    return Ud[0] if np.ndim(t) == 0 else Ud


FIT_RCOND = 1e-6


def fit_weights_least_squares(times, U_ref, order: int, bmap: BasisMap,
                              rcond: Optional[float] = FIT_RCOND) -> FourierWeights:
    """Least-squares weights reproducing sampled controls ``U_ref`` (n, 3).

    Solved through an SVD of the design matrix rather than the explicit
    normal equations: on a half-period window the sine and cosine columns
    are nearly collinear and squaring the condition number loses every digit.
    Singular values below ``rcond * s_max`` are dropped, which keeps the
    weights O(1e3) instead of O(1e9) at a small cost in fit residual;
    ``rcond=None`` gives the full-rank solution.
    """
    times = np.asarray(times, dtype=float).ravel()
    U_ref = np.asarray(U_ref, dtype=float).reshape(-1, 3)
    nb = n_basis(order)
    if times.size != U_ref.shape[0]:
        raise ValueError("times and samples differ in length")
    if times.size < nb:
        raise FitError(f"underdetermined: {times.size} samples for {nb} basis functions")
    if np.unique(times).size != times.size:
        raise FitError("sample times must be distinct")
    H = basis_matrix(times, order, bmap)
    sv = np.linalg.svd(H, compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if cond > COND_MAX:
        raise FitError(f"rank-deficient design matrix (condition number {cond:.3g})")
    eps, *_ = np.linalg.lstsq(H, U_ref, rcond=rcond)
    return FourierWeights(order, eps.T.ravel())


def save_weights(path, w: FourierWeights, bmap: BasisMap, **extra) -> None:
    doc = {
        "order": w.order,
        "eta0": bmap.eta0,
        "etaf": bmap.etaf,
        "t0": bmap.t0,
        "tf": bmap.tf,
        "eps": w.channels().tolist(),
    }
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2))


def load_weights(path) -> tuple[FourierWeights, BasisMap, dict]:
    doc = json.loads(Path(path).read_text())
    w = FourierWeights(int(doc["order"]), np.asarray(doc["eps"], dtype=float).ravel())
    bmap = BasisMap(float(doc["t0"]), float(doc["tf"]), float(doc["eta0"]), float(doc["etaf"]))
    extra = {k: v for k, v in doc.items() if k not in ("order", "eta0", "etaf", "t0", "tf", "eps")}
    return w, bmap, extra
