"""Online system identification with filtered regressors and experience replay.

The identifier assumes control-affine dynamics written as a single linear
parameterization

    x_dot = W1.T @ Phi(x, u),   Phi = [xi1(x); xi2(x) @ u]

and estimates W1 without differentiating measurements.  Both the regressor
and the state are passed through first-order low-pass filters

    k_f * Phi_f_dot = Phi - Phi_f,    k_f * x_f_dot = x - x_f

so that x_f_dot is available algebraically, and two forgetting-factor Gram
integrals accumulate the correlation of the filtered signals:

    Pi_dot = -l_f * Pi + Phi_f @ Phi_f.T
    K_dot  = -l_f * K  + Phi_f @ x_f_dot.T

The weight update descends the instantaneous residual M1 = Pi @ W1_hat - K
plus the same residual evaluated on a stack of recorded (Pi_j, K_j) pairs
(experience replay), which keeps old excitation in play after the live
signals go quiet:

    W1_hat_dot = -Gamma1 @ (M1 + sum_j Pi_j @ W1_hat - sum_j K_j)

The stack stores raw (Pi_j, K_j) snapshots; the sums are always formed with
the current weight estimate.  Snapshots are recorded on a fixed period until
the stack is full, after which a candidate replaces the stored snapshot whose
exchange most increases lambda_min(sum_j Pi_j), and only if it strictly
increases it.  That makes the stored excitation level nondecreasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .models import PlantParams

# tolerance on t reaching the next recording instant, absorbs float time grids
_DUE_SLACK = 1e-9


def _jacobi_min_eig(a: np.ndarray, off_tol: float, max_sweeps: int):
    """Cyclic Jacobi sweeps on a symmetric matrix, in place.

    Returns (smallest diagonal entry, final off-diagonal norm).  The caller
    checks convergence; keeping the kernel free of raises lets it compile
    under numba unchanged.
    """
    n = a.shape[0]
    off = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            off += 2.0 * a[i, j] * a[i, j]
    off = off ** 0.5
    for _ in range(max_sweeps):
        if off <= off_tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + (theta * theta + 1.0) ** 0.5)
                else:
                    t = -1.0 / (-theta + (theta * theta + 1.0) ** 0.5)
                c = 1.0 / (t * t + 1.0) ** 0.5
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += 2.0 * a[i, j] * a[i, j]
        off = off ** 0.5
    mn = a[0, 0]
    for i in range(1, n):
        if a[i, i] < mn:
            mn = a[i, i]
    return mn, off


try:  # pragma: no cover - exercised implicitly everywhere
    from numba import njit

    _jacobi_min_eig = njit(cache=True)(_jacobi_min_eig)
except ImportError:  # pragma: no cover
    pass


def min_eig_sym(a: np.ndarray, sym_tol: float = 1e-9, off_tol: float = 1e-10) -> float:
    """Smallest eigenvalue of a small symmetric matrix by cyclic Jacobi.

    Parameters
    ----------
    a : (n, n) array
        Symmetric matrix; asymmetry beyond sym_tol raises DomainError.
    sym_tol : float
        Maximum tolerated |a - a.T| entry.
    off_tol : float
        Off-diagonal Frobenius norm at which the iteration stops.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"need a square matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NumericalError("non-finite entries in eigenvalue input")
    if a.shape[0] == 1:
        return float(a[0, 0])
    asym = np.abs(a - a.T).max()
    if asym > sym_tol:
        raise DomainError(f"matrix is not symmetric (max |a - a.T| = {asym:.3e})")
    work = 0.5 * (a + a.T)  # exact symmetry for the rotations
    mn, off = _jacobi_min_eig(work, off_tol, 100)
    if off > off_tol:
        raise NumericalError(f"Jacobi iteration stalled at off-norm {off:.3e}")
    return float(mn)


@dataclass(frozen=True)
class IdentifierBasis:
    """Regressor structure of the assumed dynamics.

    xi1 maps the state to the drift features (k_w1,) and xi2 maps it to the
    input-gain features (k_w2, n_inputs).  true_weights, when the basis can
    represent a plant exactly, maps PlantParams to the exact W1.
    """

    name: str
    n_states: int
    n_inputs: int
    k_w1: int
    k_w2: int
    xi1: Callable[[np.ndarray], np.ndarray]
    xi2: Callable[[np.ndarray], np.ndarray]
    true_weights: Optional[Callable[[PlantParams], np.ndarray]] = None

    @property
    def size(self) -> int:
        """Total regressor length k_w1 + k_w2."""
        return self.k_w1 + self.k_w2


def _sd_xi1(x: np.ndarray) -> np.ndarray:
    x1 = x[0]
    return np.array((x1, x[1], x1 * x1 * x1))


def _sd_xi2(x: np.ndarray) -> np.ndarray:
    return np.array(((1.0,),))


def spring_damper_true_weights(p: PlantParams) -> np.ndarray:
    """Exact W1 of the spring-damper plant in the cubic basis, shape (4, 2)."""
    return np.array(
        (
            (0.0, 0.0),
            (1.0, -p.damping / p.mass),
            (0.0, -p.spring / p.mass),
            (0.0, 1.0 / p.mass),
        )
    )


SPRING_DAMPER_CUBIC = IdentifierBasis(
    name="spring_damper_cubic",
    n_states=2,
    n_inputs=1,
    k_w1=3,
    k_w2=1,
    xi1=_sd_xi1,
    xi2=_sd_xi2,
    true_weights=spring_damper_true_weights,
)

BASES: dict[str, IdentifierBasis] = {SPRING_DAMPER_CUBIC.name: SPRING_DAMPER_CUBIC}


def regressor(basis: IdentifierBasis, x: np.ndarray, u) -> np.ndarray:
    """Combined regressor Phi = [xi1(x); xi2(x) @ u], shape (k_w1 + k_w2,)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return np.concatenate((basis.xi1(x), basis.xi2(x) @ u))


def filter_derivatives(phi, phi_f, x, x_f, k_f: float):
    """Low-pass filter derivatives ((phi - phi_f)/k_f, (x - x_f)/k_f)."""
    if k_f <= 0.0:
        raise DomainError(f"filter constant must be positive, got {k_f}")
    return (phi - phi_f) / k_f, (x - x_f) / k_f


def gram_derivatives(phi_f, x_f_dot, pi, kmat, l_f: float):
    """Forgetting-factor Gram derivatives (Pi_dot, K_dot)."""
    if l_f <= 0.0:
        raise DomainError(f"forgetting factor must be positive, got {l_f}")
    pi_dot = np.outer(phi_f, phi_f) - l_f * pi
    k_dot = np.outer(phi_f, x_f_dot) - l_f * kmat
    return pi_dot, k_dot


@dataclass
class IdentifierState:
    """Mutable identifier state advanced by the simulator.

    w_hat : (K, n) weight estimate, K = k_w1 + k_w2
    phi_f : (K,) filtered regressor
    x_f   : (n,) filtered state
    pi    : (K, K) Gram integral of phi_f
    kmat  : (K, n) cross integral of phi_f against x_f_dot
    """

    w_hat: np.ndarray
    phi_f: np.ndarray
    x_f: np.ndarray
    pi: np.ndarray
    kmat: np.ndarray

    @classmethod
    def zeros(cls, basis: IdentifierBasis) -> "IdentifierState":
        k = basis.size
        n = basis.n_states
        return cls(
            w_hat=np.zeros((k, n)),
            phi_f=np.zeros(k),
            x_f=np.zeros(n),
            pi=np.zeros((k, k)),
            kmat=np.zeros((k, n)),
        )


def m1(state: IdentifierState) -> np.ndarray:
    """Instantaneous filtered-regression residual Pi @ w_hat - K, shape (K, n)."""
    return state.pi @ state.w_hat - state.kmat


class ReplayStack:
    """Fixed-capacity store of (Pi_j, K_j) snapshots with eigenvalue-greedy turnover.

    Recording is attempted every `period` seconds.  While below capacity every
    due candidate is stored; at capacity the candidate replaces the snapshot
    whose exchange most increases lambda_min(sum_j Pi_j), and is dropped if no
    exchange strictly increases it.  sum_pi and sum_k are recomputed from the
    stored snapshots on every mutation so they never drift from their
    definition.
    """

    def __init__(self, capacity: int, period: float):
        if capacity < 1:
            raise ConfigError(f"stack capacity must be >= 1, got {capacity}")
        if period <= 0.0:
            raise ConfigError(f"recording period must be positive, got {period}")
        self.capacity = int(capacity)
        self.period = float(period)
        self.pis: list[np.ndarray] = []
        self.ks: list[np.ndarray] = []
        self.times: list[float] = []
        self.sum_pi: Optional[np.ndarray] = None
        self.sum_k: Optional[np.ndarray] = None
        self.lam_min: float = 0.0
        self.next_due: float = self.period

    def __len__(self) -> int:
        return len(self.pis)

    @property
    def full(self) -> bool:
        return len(self.pis) >= self.capacity

    def _refresh_sums(self):
        self.sum_pi = np.sum(self.pis, axis=0)
        self.sum_k = np.sum(self.ks, axis=0)
        self.lam_min = min_eig_sym(self.sum_pi)

    def maybe_record(self, pi: np.ndarray, kmat: np.ndarray, t: float) -> bool:
        """Offer a snapshot at time t; returns True when it was stored."""
        if t < self.next_due - _DUE_SLACK:
            return False
        self.next_due = t + self.period
        if not self.full:
            self.pis.append(np.array(pi, dtype=float))
            self.ks.append(np.array(kmat, dtype=float))
            self.times.append(float(t))
            self._refresh_sums()
            return True
        base = self.sum_pi
        best_gain = self.lam_min
        best_j = -1
        for j in range(len(self.pis)):
            lam = min_eig_sym(base - self.pis[j] + pi)
            if lam > best_gain:
                best_gain = lam
                best_j = j
        if best_j < 0:
            return False
        self.pis[best_j] = np.array(pi, dtype=float)
        self.ks[best_j] = np.array(kmat, dtype=float)
        self.times[best_j] = float(t)
        self._refresh_sums()
        return True


def update_derivative(state: IdentifierState, stack: Optional[ReplayStack], gamma1) -> np.ndarray:
    """Weight-estimate derivative -Gamma1 @ (M1 + sum_j Pi_j @ w_hat - sum_j K_j).

    gamma1 may be a positive scalar or a (K, K) gain matrix.  An empty or
    absent stack reduces this to the replay-free law -Gamma1 @ M1.
    """
    resid = m1(state)
    if stack is not None and len(stack) > 0:
        resid = resid + stack.sum_pi @ state.w_hat - stack.sum_k
    g = np.asarray(gamma1, dtype=float)
    if g.ndim == 0:
        return -float(g) * resid
    return -(g @ resid)


def estimates(state: IdentifierState, basis: IdentifierBasis, x: np.ndarray):
    """Identified drift f_hat(x) (n,) and input gain g_hat(x) (n, n_inputs)."""
    w1 = state.w_hat[: basis.k_w1, :]
    w2 = state.w_hat[basis.k_w1 :, :]
    f_hat = w1.T @ basis.xi1(x)
    g_hat = w2.T @ basis.xi2(x)
    return f_hat, g_hat
