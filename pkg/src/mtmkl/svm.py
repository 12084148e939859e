"""Per-task SVM dual solver, q-vectors and decision values."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InputError, UnlearnableTaskError

if os.environ.get("MTMKL_PURE_PYTHON") == "1":
    from ._smo_py import smo as _smo
    BACKEND = "python"
else:
    try:
        from ._smo import smo as _smo
        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._smo_py import smo as _smo
        BACKEND = "python"

DEFAULT_TOL = 1e-3
SYM_TOL = 1e-10


@dataclass
class DualSolution:
    alpha: np.ndarray
    bias: float
    objective: float
    kkt_violation: float
    iterations: int
    converged: bool = True
    history: np.ndarray | None = None

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.alpha > 0)


def default_max_iter(n: int) -> int:
    return 10 * n * 1000


def _check_labels(y):
    y = np.asarray(y, dtype=float).ravel()
    if not np.all((y == 1) | (y == -1)):
        raise InputError("labels must be +1 or -1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise UnlearnableTaskError("training labels contain a single class")
    return y


def compute_bias(K, y, alpha, C) -> float:
    """Average over free support vectors of ``y_i - sum_j a_j y_j K_ij``.

    Without free vectors, the midpoint of the interval allowed by the bounded
    ones.
    """
    g = K @ (alpha * y)
    r = y - g
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        return float(np.mean(r[free]))
    pos = y > 0
    at_zero = alpha <= 0
    lower = (at_zero & pos) | (~at_zero & ~pos)
    upper = (at_zero & ~pos) | (~at_zero & pos)
    lo = np.max(r[lower]) if lower.any() else None
    hi = np.min(r[upper]) if upper.any() else None
    if lo is None and hi is None:
        return 0.0
    if lo is None:
        return float(hi)
    if hi is None:
        return float(lo)
    return float(0.5 * (lo + hi))


def kkt_violation(K, y, alpha, bias, C) -> float:
    """Largest three-case KKT residual (zero, free, at-bound multipliers)."""
    if alpha.size == 0:
        return 0.0
    m = y * (K @ (alpha * y) + bias)
    at_zero = alpha <= 0
    at_c = alpha >= C
    free = ~at_zero & ~at_c
    viol = np.zeros_like(m)
    viol[at_zero] = np.maximum(0.0, 1.0 - m[at_zero])
    viol[at_c] = np.maximum(0.0, m[at_c] - 1.0)
    viol[free] = np.abs(1.0 - m[free])
    return float(viol.max())


def dual_objective(K, y, alpha) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def solve_dual(K, y, C: float, tol: float = DEFAULT_TOL, max_iter: int | None = None,
               alpha0=None, record: bool = False) -> DualSolution:
    """Maximize ``1'a - a'YKYa/2`` over ``0 <= a <= C``, ``y'a = 0``.

    Raises :class:`ConvergenceError` (with ``best`` set to the final
    :class:`DualSolution`) when ``max_iter`` pair updates do not reach ``tol``.
    """
    K = np.ascontiguousarray(K, dtype=float)
    y = _check_labels(y)
    n = y.size
    if K.shape != (n, n):
        raise InputError(f"kernel shape {K.shape} does not match {n} labels")
    if not np.allclose(K, K.T, rtol=0.0, atol=SYM_TOL):
        raise InputError("kernel matrix is not symmetric")
    if C < 0:
        raise InputError(f"C must be nonnegative, got {C}")
    if max_iter is None:
        max_iter = default_max_iter(n)
    alpha, _, it, converged, history = _smo(K, y, float(C), float(tol), int(max_iter), alpha0, record)
    np.clip(alpha, 0.0, C, out=alpha)
    bias = compute_bias(K, y, alpha, C)
    sol = DualSolution(
        alpha=alpha,
        bias=bias,
        objective=dual_objective(K, y, alpha),
        kkt_violation=kkt_violation(K, y, alpha, bias, C),
        iterations=int(it),
        converged=bool(converged),
        history=history,
    )
    if not converged:
        raise ConvergenceError(f"SMO did not reach tol={tol} in {max_iter} iterations", best=sol)
    return sol


def compute_q(bank, t: int, y_t, alpha) -> np.ndarray:
    """``q[m] = -(a*y)' K_t^m (a*y) / 2`` for every base kernel of task ``t``."""
    ay = np.asarray(alpha, dtype=float) * np.asarray(y_t, dtype=float)
    G = bank.grams[t]
    if ay.shape != (G.shape[1],):
        raise InputError(f"alpha/labels have length {ay.size}, task {t} has {G.shape[1]} samples")
    return -0.5 * np.einsum("i,mij,j->m", ay, G, ay)


def decision_values(model, t: int, X) -> np.ndarray:
    """Dual-expansion scores ``sum_j a_j y_j k_t(x_j, x) + b`` for task ``t``."""
    return model.decision_function(t, X)


def predict_labels(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    return np.where(scores >= 0, 1.0, -1.0)
