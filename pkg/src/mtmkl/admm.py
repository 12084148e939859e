"""Consensus ADMM for the kernel-weight subproblem.

Solves::

    min_theta  lam * sum_{t<s} ||theta_t - theta_s||_2 + sum_t theta_t' q_t
    s.t.       theta_t >= 0, ||theta_t||_1 <= 1

with one local copy ``s_i = (s_i[0], s_i[1])`` per task pair, a projected
global copy ``z`` and scaled duals ``u`` (pairs) and ``v`` (projection).
Each sweep is theta-update, then the pair prox and the projection (which are
independent of each other), then the dual ascent steps.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InputError

RESIDUAL_FIELDS = ("p1", "p2", "p3", "d1", "d2", "d3")


@dataclass(frozen=True)
class StoppingTolerances:
    abs_tol: float = 1e-4
    rel_tol: float = 1e-3
    max_iters: int = 5000


def pair_index(T: int):
    """Lexicographic enumeration of task pairs ``(t, s)`` with ``t < s``."""
    first, second = np.triu_indices(T, k=1)
    return first.astype(np.intp), second.astype(np.intp)


def shrink(a, kappa: float) -> np.ndarray:
    """Vector soft-thresholding ``(1 - kappa/||a||)_+ a``; zero maps to zero."""
    a = np.asarray(a, dtype=float)
    if kappa < 0:
        raise InputError(f"kappa must be nonnegative, got {kappa}")
    nrm = float(np.linalg.norm(a))
    if nrm == 0.0 or nrm <= kappa:
        return np.zeros_like(a)
    return (1.0 - kappa / nrm) * a


def shrink_rows(A, kappa: float) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    nrm = np.linalg.norm(A, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(nrm > kappa, 1.0 - kappa / nrm, 0.0)
    return factor * A


def _simplex_rows(P):
    M = P.shape[1]
    U = -np.sort(-P, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    ind = np.arange(1, M + 1)
    cond = U - css / ind > 0
    k = M - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(P.shape[0]), k] / (k + 1)
    return np.maximum(P - tau[:, None], 0.0)


def project_rows(P) -> np.ndarray:
    """Row-wise Euclidean projection onto ``{x >= 0, sum(x) <= 1}``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    X = np.maximum(P, 0.0)
    over = X.sum(axis=1) > 1.0
    if np.any(over):
        X[over] = _simplex_rows(P[over])
    return X


def project_box_l1(p) -> np.ndarray:
    """Euclidean projection of one vector onto ``{x >= 0, ||x||_1 <= 1}``."""
    p = np.asarray(p, dtype=float)
    return project_rows(p.reshape(1, -1)).reshape(p.shape)


def project_orthant(p) -> np.ndarray:
    return np.maximum(np.asarray(p, dtype=float), 0.0)


def project_l1_ball(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.abs(p).sum() <= 1.0:
        return p.copy()
    return np.sign(p) * _simplex_rows(np.abs(p).reshape(1, -1)).reshape(p.shape)


def dykstra_project(p, tol: float = 1e-12, max_iters: int = 10000):
    """Dykstra alternation between the orthant and the l1 ball.

    Returns ``(x, y, increments, iterations)`` where ``x`` is the final l1-ball
    iterate, ``y`` the final orthant iterate and ``increments`` the pair of
    Dykstra correction vectors. ``x`` converges to :func:`project_box_l1` of
    ``p``.
    """
    x = np.asarray(p, dtype=float).copy()
    a = np.zeros_like(x)
    b = np.zeros_like(x)
    y = x
    for k in range(1, max_iters + 1):
        y = project_orthant(x + a)
        a = x + a - y
        x_new = project_l1_ball(y + b)
        b = y + b - x_new
        done = np.linalg.norm(x_new - x) <= tol and np.linalg.norm(y - x_new) <= tol
        x = x_new
        if done:
            return x, y, (a, b), k
    return x, y, (a, b), max_iters


def objective(theta, q, lam: float) -> float:
    theta = np.asarray(theta, dtype=float)
    q = np.asarray(q, dtype=float)
    lin = float(np.sum(theta * q))
    return lin + lam * fusion_penalty(theta)


def fusion_penalty(theta) -> float:
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    a, b = pair_index(theta.shape[0])
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(theta[a] - theta[b], axis=1).sum())


def pairwise_distances(theta) -> np.ndarray:
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    diff = theta[:, None, :] - theta[None, :, :]
    return np.sqrt(np.einsum("tsm,tsm->ts", diff, diff))


@dataclass
class AdmmState:
    s: np.ndarray
    u: np.ndarray
    z: np.ndarray
    v: np.ndarray
    beta: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    rho: float = 1.0
    iterations: int = 0
    converged: bool = False
    residuals: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)

    @classmethod
    def initial(cls, theta0, rho: float = 1.0) -> "AdmmState":
        theta0 = np.array(theta0, dtype=float)
        T, M = theta0.shape
        a, b = pair_index(T)
        s = np.stack([theta0[a], theta0[b]], axis=1) if a.size else np.zeros((0, 2, M))
        return cls(
            s=s,
            u=np.zeros_like(s),
            z=theta0.copy(),
            v=np.zeros_like(theta0),
            beta=np.zeros_like(theta0),
            y=theta0.copy(),
            theta=theta0.copy(),
            rho=float(rho),
        )

    @property
    def shape(self):
        return self.theta.shape

    def theta_tilde(self) -> np.ndarray:
        a, b = pair_index(self.theta.shape[0])
        return np.stack([self.theta[a], self.theta[b]], axis=1)

    def copy(self) -> "AdmmState":
        return AdmmState(
            self.s.copy(), self.u.copy(), self.z.copy(), self.v.copy(), self.beta.copy(),
            self.y.copy(), self.theta.copy(), self.rho, self.iterations, self.converged,
            list(self.residuals), list(self.epsilons),
        )


def s_update(state: AdmmState, lam: float) -> np.ndarray:
    """Exact prox of ``lam * ||s_i[0] - s_i[1]||`` at ``theta_tilde_i - u_i``.

    The pair mean is kept and the half-difference is shrunk with threshold
    ``2 lam / rho``.
    """
    p = state.theta_tilde() - state.u
    mean = 0.5 * (p[:, 0] + p[:, 1])
    d = 0.5 * shrink_rows(p[:, 0] - p[:, 1], 2.0 * lam / state.rho)
    state.s = np.stack([mean + d, mean - d], axis=1)
    return state.s


def theta_update(state: AdmmState, q, divisor: str = "derived") -> np.ndarray:
    """Closed-form minimizer of the linear term plus all quadratic penalties.

    ``divisor="derived"`` divides by the number of quadratic terms containing
    ``theta_t`` (``T``); ``"printed"`` uses ``T - 1`` for compatibility.
    """
    q = np.asarray(q, dtype=float)
    T, M = state.theta.shape
    a, b = pair_index(T)
    acc = state.z + state.v - q / state.rho
    if a.size:
        su = state.s + state.u
        np.add.at(acc, a, su[:, 0])
        np.add.at(acc, b, su[:, 1])
    if divisor == "derived":
        c = T
    elif divisor == "printed":
        c = max(T - 1, 1)
    else:
        raise InputError(f"unknown divisor mode {divisor!r}")
    state.theta = acc / c
    return state.theta


def z_update(state: AdmmState, projection: str = "exact") -> np.ndarray:
    """``z_t = Proj(theta_t - v_t)`` row by row."""
    target = state.theta - state.v
    if projection == "exact":
        state.z = project_rows(target)
        state.y = state.z.copy()
        state.beta = np.zeros_like(state.z)
    elif projection == "dykstra":
        zs, ys, betas = [], [], []
        for row in target:
            x, yy, (_, b), _ = dykstra_project(row)
            zs.append(x)
            ys.append(yy)
            betas.append(b)
        state.z = np.array(zs).reshape(target.shape)
        state.y = np.array(ys).reshape(target.shape)
        state.beta = np.array(betas).reshape(target.shape)
    else:
        raise InputError(f"unknown projection mode {projection!r}")
    return state.z


def dual_updates(state: AdmmState):
    state.u = state.u + state.s - state.theta_tilde()
    state.v = state.v + state.z - state.theta
    return state.u, state.v


def _lp_vertices(q) -> np.ndarray:
    q = np.atleast_2d(np.asarray(q, dtype=float))
    theta = np.zeros_like(q)
    best = np.argmin(q, axis=1)
    rows = np.flatnonzero(q[np.arange(q.shape[0]), best] <= 0)
    # a strictly positive row keeps the zero vertex
    theta[rows, best[rows]] = 1.0
    return theta


class TraceWriter:
    """CSV sink for per-iteration residuals and objective values."""

    header = ("iteration", "rho") + RESIDUAL_FIELDS + ("eps_pri1", "eps_pri2", "eps_pri3", "eps_dual", "objective")

    def __init__(self, fh):
        self._w = csv.writer(fh, lineterminator="\n")
        self._w.writerow(self.header)

    def write(self, k, rho, res, eps, obj):
        self._w.writerow([k] + [f"{x:.17g}" for x in (rho, *res, *eps, obj)])


def solve_theta(q, lam: float, rho: float = 1.0, tol: StoppingTolerances | None = None,
                warm=None, *, adaptive_rho: bool = True, projection: str = "exact",
                divisor: str = "derived", trace=None):
    """Minimize the fused kernel-weight objective for fixed ``q``.

    ``warm`` may be a previous :class:`AdmmState` (all primal and dual
    variables are reused) or a ``(T, M)`` starting point. Returns the feasible
    projected iterate and the final state. ``trace`` is an optional writable
    text stream receiving one CSV row per iteration.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    T, M = q.shape
    if lam < 0:
        raise InputError(f"lambda must be nonnegative, got {lam}")
    if not rho > 0:
        raise InputError(f"rho must be positive, got {rho}")
    tol = tol or StoppingTolerances()

    if lam == 0:
        theta = _lp_vertices(q)
        state = AdmmState.initial(theta, rho)
        state.converged = True
        return theta, state

    if isinstance(warm, AdmmState) and warm.shape == (T, M):
        state = warm.copy()
        state.iterations = 0
        state.converged = False
        state.residuals, state.epsilons = [], []
    else:
        theta0 = np.full((T, M), 1.0 / M) if warm is None else np.asarray(warm, dtype=float)
        if theta0.shape != (T, M):
            raise InputError(f"warm start has shape {theta0.shape}, expected {(T, M)}")
        state = AdmmState.initial(theta0, rho)
    state.rho = float(rho) if not isinstance(warm, AdmmState) else state.rho

    writer = TraceWriter(trace) if trace is not None else None
    n_pair = math.sqrt(max(state.s.size, 1))
    n_glob = math.sqrt(T * M)
    mu = 10.0
    a, b = pair_index(T)

    for k in range(1, tol.max_iters + 1):
        theta_old, z_old, y_old = state.theta, state.z, state.y
        theta_update(state, q, divisor)
        s_update(state, lam)
        z_update(state, projection)
        dual_updates(state)

        tt = state.theta_tilde()
        p1 = float(np.linalg.norm(state.s - tt))
        p2 = float(np.linalg.norm(state.z - state.theta))
        p3 = float(np.linalg.norm(state.y - state.z)) if projection == "dykstra" else 0.0
        d1 = state.rho * float(np.linalg.norm(state.theta - theta_old))
        d2 = state.rho * float(np.linalg.norm(state.z - z_old))
        d3 = state.rho * float(np.linalg.norm(state.y - y_old)) if projection == "dykstra" else 0.0

        dual_agg = state.v.copy()
        if a.size:
            np.add.at(dual_agg, a, state.u[:, 0])
            np.add.at(dual_agg, b, state.u[:, 1])
        eps1 = n_pair * tol.abs_tol + tol.rel_tol * max(np.linalg.norm(state.s), np.linalg.norm(tt))
        eps2 = n_glob * tol.abs_tol + tol.rel_tol * max(np.linalg.norm(state.z), np.linalg.norm(state.theta))
        eps3 = n_glob * tol.abs_tol + tol.rel_tol * max(np.linalg.norm(state.y), np.linalg.norm(state.z))
        epsd = n_glob * tol.abs_tol + tol.rel_tol * state.rho * float(np.linalg.norm(dual_agg))

        res = (p1, p2, p3, d1, d2, d3)
        eps = (eps1, eps2, eps3, epsd)
        state.residuals.append(res)
        state.epsilons.append(eps)
        state.iterations = k
        if writer is not None:
            writer.write(k, state.rho, res, eps, objective(state.z, q, lam))

        if p1 <= eps1 and p2 <= eps2 and p3 <= eps3 and max(d1, d2, d3) <= epsd:
            state.converged = True
            break

        if adaptive_rho:
            r = math.hypot(p1, p2)
            sd = math.hypot(d1, d2)
            if r > mu * sd:
                state.rho *= 2.0
                state.u /= 2.0
                state.v /= 2.0
            elif sd > mu * r:
                state.rho /= 2.0
                state.u *= 2.0
                state.v *= 2.0

    theta = state.z.copy()
    if not state.converged:
        raise ConvergenceError(
            f"theta ADMM hit {tol.max_iters} iterations; last residuals "
            + ", ".join(f"{n}={x:.3g}" for n, x in zip(RESIDUAL_FIELDS, state.residuals[-1])),
            best=(theta, state),
        )
    return theta, state
