"""Matrix-free Fisher information operator and its diagnostics companions.

For a Q-network with a linear output layer (interpreted as a conditional
Gaussian with std ``beta``), the Fisher matrix over a batch of states is
(beta^2 / n) * sum_i J_i^T J_i, where J_i is the per-sample Jacobian of the
Q-outputs with respect to the flat parameters.  The operator applies this
product without ever materializing the matrix; the explicit dense build and
Gauss-Jordan inversion exist for the inversion-diagnostics study only.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .net import Mlp, Tape

EXPLICIT_SIZE_GUARD = 5000


class FisherOperator:
    """v -> (beta^2/n) J^T J v over a fixed minibatch of states.

    Linear, symmetric, and PSD in exact arithmetic.  Holds an immutable
    linearization of the net at construction; applications are pure.
    """

    def __init__(self, net: Mlp, states: np.ndarray, beta: float = 1.0):
        if beta <= 0:
            raise ValueError("beta must be positive")
        self.tape = Tape(net, states)
        self.beta = float(beta)
        self.dim = net.param_count
        self.n = self.tape.n
        self._scale = self.beta * self.beta / self.n

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self._scale * self.tape.vjp(self.tape.jvp(v))

    __call__ = apply


def fisher_vec(op: FisherOperator, v: np.ndarray) -> np.ndarray:
    return op.apply(v)


def damped_fisher_vec(op: FisherOperator, damping: "DampingState", v: np.ndarray) -> np.ndarray:
    return op.apply(v) + damping.d * np.asarray(v, dtype=np.float64)


@dataclass(frozen=True)
class DampingState:
    """Damping factor d added to the Fisher before solving, G + d*I.

    With ``adapt`` set, d follows a Levenberg-Marquardt style rule driven by
    the reduction ratio of the last accepted step; otherwise it stays fixed.
    """

    d: float = 0.1
    adapt: bool = False
    increase_factor: float = 1.5
    decrease_factor: float = 2.0 / 3.0
    rho_low: float = 0.25
    rho_high: float = 0.75
    d_min: float = 1e-6
    d_max: float = 1e3

    def __post_init__(self):
        if not (self.d_min > 0 and self.d_min <= self.d <= self.d_max):
            raise ValueError(f"d={self.d} outside [{self.d_min}, {self.d_max}]")
        if self.increase_factor <= 1 or not (0 < self.decrease_factor < 1):
            raise ValueError("bad damping adaptation factors")
        if not (0 < self.rho_low < 1 and 0 < self.rho_high < 1):
            raise ValueError("rho thresholds must lie in (0,1)")


def update_damping(state: DampingState, rho: float) -> DampingState:
    """One Levenberg-Marquardt adjustment from the reduction ratio rho."""
    if not state.adapt:
        return state
    if rho < state.rho_low:
        d = state.d * state.increase_factor
    elif rho > state.rho_high:
        d = state.d * state.decrease_factor
    else:
        return state
    return replace(state, d=float(np.clip(d, state.d_min, state.d_max)))


def explicit_fisher(op: FisherOperator) -> np.ndarray:
    """Dense (param_count x param_count) Fisher matrix.  Diagnostics only.

    Built from the explicit stacked Jacobian (per-sample rows assembled by
    backpropagating one output unit at a time), an independent path from the
    jvp/vjp composition used by ``fisher_vec``.
    """
    if op.dim > EXPLICIT_SIZE_GUARD:
        raise ValueError(
            f"param_count {op.dim} exceeds explicit-build guard {EXPLICIT_SIZE_GUARD}"
        )
    jac = _stacked_jacobian(op.tape)
    m = jac.T @ jac * op._scale
    # enforce exact symmetry (GEMM rounding is ~1e-16, well under the 1e-10 bound)
    return 0.5 * (m + m.T)


def _stacked_jacobian(tape: Tape) -> np.ndarray:
    """All per-sample Jacobians stacked, shape (n*action_count, param_count)."""
    net = tape.net
    n, a_count = tape.n, net.spec.action_count
    p = net.param_count
    jac = np.empty((n, a_count, p))
    offsets = []
    off = 0
    for n_in, n_out in zip(net.spec.sizes[:-1], net.spec.sizes[1:]):
        offsets.append((off, n_in, n_out))
        off += n_in * n_out + n_out
    for k in range(a_count):
        delta = np.zeros((n, a_count))
        delta[:, k] = 1.0
        for l in range(net.n_layers - 1, -1, -1):
            off, n_in, n_out = offsets[l]
            # per-sample outer products a_{l-1,i} delta_i^T
            gw = np.einsum("ni,nj->nij", tape.acts[l], delta)
            jac[:, k, off : off + n_in * n_out] = gw.reshape(n, n_in * n_out)
            jac[:, k, off + n_in * n_out : off + n_in * n_out + n_out] = delta
            if l > 0:
                delta = (delta @ net.weights[l].T) * tape.dmasks[l - 1]
    return jac.reshape(n * a_count, p)


def gauss_jordan_inverse(m: np.ndarray) -> np.ndarray:
    """Matrix inverse by Gauss-Jordan elimination with partial pivoting."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"need a square matrix, got {m.shape}")
    n = m.shape[0]
    aug = np.hstack([m.copy(), np.eye(n)])
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[piv, col]) < 1e-12:
            raise np.linalg.LinAlgError(
                f"pivot {abs(aug[piv, col]):.2e} below 1e-12 at column {col}; "
                "matrix is singular (likely under-damped)"
            )
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] /= aug[col, col]
        factors = aug[:, col].copy()
        factors[col] = 0.0
        aug -= np.outer(factors, aug[col])
    return aug[:, n:]


@dataclass(frozen=True)
class EigenEstimateConfig:
    """Settings for the gradient-ascent maximal-eigenvalue estimator."""

    steps: int = 10000
    learning_rate: float = 0.0005
    early_stop: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.learning_rate <= 0 or self.early_stop <= 0:
            raise ValueError("steps, learning_rate, early_stop must be positive")


def max_eigenvalue(apply, dim: int, cfg: EigenEstimateConfig = EigenEstimateConfig()) -> float:
    """Approximate largest eigenvalue of a symmetric PSD operator.

    Gradient ascent on the Rayleigh quotient v -> (v/|v|)^T G (v/|v|),
    stopping early once the update norm falls below ``cfg.early_stop``.
    ``apply`` is any symmetric linear map on vectors of length ``dim``
    (typically a damped Fisher operator).
    """
    if dim < 1:
        raise ValueError("operator dimension must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    rayleigh = float(v @ apply(v))
    for _ in range(cfg.steps):
        gv = apply(v)
        rayleigh = float(v @ gv)
        if not np.isfinite(rayleigh):
            raise FloatingPointError("non-finite Rayleigh quotient during eigenvalue ascent")
        # gradient of the quotient at unit norm: 2 (G v - (v^T G v) v)
        grad = 2.0 * (gv - rayleigh * v)
        if np.linalg.norm(grad) < cfg.early_stop:
            break
        v = v + cfg.learning_rate * grad
        v /= np.linalg.norm(v)
    return rayleigh


def damped_max_eigenvalue(
    op: FisherOperator, damping: DampingState, cfg: EigenEstimateConfig = EigenEstimateConfig()
) -> float:
    """Largest eigenvalue estimate of G + d*I."""
    return max_eigenvalue(lambda v: damped_fisher_vec(op, damping, v), op.dim, cfg)
