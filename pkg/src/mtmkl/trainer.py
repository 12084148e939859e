"""Block coordinate descent over SVM duals and fused kernel weights."""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .admm import StoppingTolerances, fusion_penalty, pairwise_distances, solve_theta
from .errors import ContractError, ConvergenceError, InputError, MtmklError
from .kernelbank import KernelBank, KernelSpec, combine, cross_gram
from .svm import compute_q, solve_dual

log = logging.getLogger(__name__)

FEAS_TOL = 1e-8
BOX_TOL = 1e-10


@dataclass
class TrainConfig:
    C: float = 1.0
    lam: float = 0.0
    rho: float = 1.0
    outer_tol: float = 1e-4
    outer_max_iters: int = 50
    svm_tol: float = 1e-3
    admm: StoppingTolerances = field(default_factory=StoppingTolerances)
    adaptive_rho: bool = True
    projection: str = "exact"
    divisor: str = "derived"
    max_backtracks: int = 10
    seed: int = 0
    theta_init: object = "uniform"
    threads: int = 1

    def __post_init__(self):
        if not self.C > 0:
            raise InputError(f"C must be positive, got {self.C}")
        if self.lam < 0:
            raise InputError(f"lambda must be nonnegative, got {self.lam}")
        if not self.rho > 0:
            raise InputError(f"rho must be positive, got {self.rho}")
        if self.outer_max_iters < 1:
            raise InputError("outer_max_iters must be at least 1")
        if isinstance(self.admm, dict):
            self.admm = StoppingTolerances(**self.admm)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not isinstance(self.theta_init, str):
            d["theta_init"] = np.asarray(self.theta_init).tolist()
        return d


@dataclass
class TrainedModel:
    specs: list
    task_names: list
    theta: np.ndarray
    alphas: list
    biases: list
    labels: list
    support: list
    support_X: list
    objective: float
    trace: list
    outer_iterations: int
    admm_iterations: list
    status: str = "converged"
    warnings: list = field(default_factory=list)
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def n_tasks(self) -> int:
        return len(self.task_names)

    def decision_function(self, t: int, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        sv = self.support_X[t]
        if sv.shape[0] and X.shape[1] != sv.shape[1]:
            raise InputError(f"query dimension {X.shape[1]} does not match model dimension {sv.shape[1]}")
        out = np.full(X.shape[0], float(self.biases[t]))
        if sv.shape[0] == 0:
            return out
        idx = self.support[t]
        coef = self.alphas[t][idx] * self.labels[t][idx]
        for m, spec in enumerate(self.specs):
            w = self.theta[t, m]
            if w > 0:
                out += w * (coef @ cross_gram(spec, sv, X))
        return out

    def predict(self, t: int, X) -> np.ndarray:
        return np.where(self.decision_function(t, X) >= 0, 1.0, -1.0)

    def affinity(self) -> np.ndarray:
        return pairwise_distances(self.theta)

    def to_dict(self) -> dict:
        return {
            "format": "mtmkl-model",
            "version": 1,
            "package_version": __version__,
            "kernels": [s.to_dict() for s in self.specs],
            "tasks": [
                {
                    "name": self.task_names[t],
                    "theta": self.theta[t].tolist(),
                    "alpha": self.alphas[t].tolist(),
                    "labels": self.labels[t].tolist(),
                    "bias": float(self.biases[t]),
                    "support": self.support[t].tolist(),
                    "support_X": self.support_X[t].tolist(),
                }
                for t in range(self.n_tasks)
            ],
            "objective": self.objective,
            "trace": self.trace,
            "outer_iterations": self.outer_iterations,
            "admm_iterations": self.admm_iterations,
            "status": self.status,
            "warnings": self.warnings,
            "wall_time": self.wall_time,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("format") != "mtmkl-model":
            raise InputError("not an mtmkl model file")
        if d.get("version") != 1:
            raise InputError(f"unsupported model version {d.get('version')}")
        tasks = d["tasks"]
        M = len(d["kernels"])
        return cls(
            specs=[KernelSpec.from_dict(k) for k in d["kernels"]],
            task_names=[t["name"] for t in tasks],
            theta=np.array([t["theta"] for t in tasks], dtype=float).reshape(len(tasks), M),
            alphas=[np.array(t["alpha"], dtype=float) for t in tasks],
            biases=[float(t["bias"]) for t in tasks],
            labels=[np.array(t["labels"], dtype=float) for t in tasks],
            support=[np.array(t["support"], dtype=np.intp) for t in tasks],
            support_X=[np.array(t["support_X"], dtype=float).reshape(len(t["support"]), -1) for t in tasks],
            objective=float(d["objective"]),
            trace=d.get("trace", []),
            outer_iterations=int(d.get("outer_iterations", 0)),
            admm_iterations=list(d.get("admm_iterations", [])),
            status=d.get("status", "converged"),
            warnings=list(d.get("warnings", [])),
            wall_time=float(d.get("wall_time", 0.0)),
            config=d.get("config", {}),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, allow_nan=False)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def objective_terms(bank: KernelBank, theta, alphas, biases, labels, C: float, lam: float) -> dict:
    """Regularizer, hinge and fusion parts of the primal objective."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    reg = 0.0
    hinge = 0.0
    for t in range(bank.n_tasks):
        K = combine(bank, t, theta[t])
        ay = alphas[t] * labels[t]
        g = K @ ay
        reg += 0.5 * float(ay @ g)
        margins = labels[t] * (g + biases[t])
        hinge += float(np.maximum(0.0, 1.0 - margins).sum())
    fusion = fusion_penalty(theta)
    return {
        "regularizer": reg,
        "hinge": C * hinge,
        "fusion": lam * fusion,
        "total": reg + C * hinge + lam * fusion,
    }


def check_feasible(theta, alphas, labels, C: float):
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if np.any(theta < -FEAS_TOL) or np.any(theta.sum(axis=1) > 1.0 + FEAS_TOL):
        raise ContractError("kernel weights leave the feasible set")
    for t, (a, y) in enumerate(zip(alphas, labels)):
        if np.any(a < -BOX_TOL) or np.any(a > C + BOX_TOL):
            raise ContractError(f"task {t}: dual variables violate the box constraint")
        if abs(float(a @ y)) > 1e-8 * max(1.0, C * a.size):
            raise ContractError(f"task {t}: dual variables violate the equality constraint")


def primal_objective(bank: KernelBank, model: TrainedModel, data, C: float, lam: float) -> float:
    """Regularized hinge risk plus the pairwise fusion penalty on the training split."""
    labels = [d.y_train for d in data] if data is not None else model.labels
    check_feasible(model.theta, model.alphas, labels, C)
    return objective_terms(bank, model.theta, model.alphas, model.biases, labels, C, lam)["total"]


def bound_value(gamma: float, R: float, M: int, n: int, T: int) -> float:
    """``sqrt(sqrt(3) gamma R M / (n T))``, the empirical Rademacher complexity bound."""
    for name, v in (("gamma", gamma), ("R", R), ("M", M), ("n", n), ("T", T)):
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise InputError(f"{name} must be positive, got {v!r}")
    return math.sqrt(math.sqrt(3.0) * gamma * R * M / (n * T))


class _Alternation:
    """Mutable state of one block coordinate descent run."""

    def __init__(self, data, bank, cfg, names):
        self.data = data
        self.bank = bank
        self.cfg = cfg
        self.names = names
        self.labels = [d.y_train if hasattr(d, "y_train") else np.asarray(d, dtype=float) for d in data]
        self.warnings = []

    def alpha_step(self, theta, warm=None):
        def one(t):
            K = combine(self.bank, t, theta[t])
            a0 = None if warm is None else warm[t].alpha
            try:
                return solve_dual(K, self.labels[t], self.cfg.C, self.cfg.svm_tol, alpha0=a0)
            except ConvergenceError as exc:
                self.warnings.append(f"task {self.names[t]}: {exc}")
                return exc.best
            except MtmklError as exc:
                raise type(exc)(f"task {self.names[t]!r}: {exc}") from exc

        T = self.bank.n_tasks
        if self.cfg.threads > 1 and T > 1:
            with ThreadPoolExecutor(min(self.cfg.threads, T)) as pool:
                return list(pool.map(one, range(T)))
        return [one(t) for t in range(T)]

    def terms(self, theta, sols):
        return objective_terms(
            self.bank, theta, [s.alpha for s in sols], [s.bias for s in sols], self.labels, self.cfg.C, self.cfg.lam
        )


def _initial_theta(cfg, T, M):
    if isinstance(cfg.theta_init, str):
        if cfg.theta_init != "uniform":
            raise InputError(f"unknown theta_init {cfg.theta_init!r}")
        return np.full((T, M), 1.0 / M)
    theta = np.array(cfg.theta_init, dtype=float)
    if theta.shape != (T, M):
        raise InputError(f"theta_init has shape {theta.shape}, expected {(T, M)}")
    if np.any(theta < 0) or np.any(theta.sum(axis=1) > 1 + FEAS_TOL):
        raise InputError("theta_init is infeasible")
    return theta


def _run(data, bank, cfg, names):
    """Alternate dual solves and damped kernel-weight steps.

    The kernel-weight step moves from the current weights toward the ADMM
    minimizer of the linearized subproblem; the step is halved until the
    primal objective does not increase, which keeps the trace monotone.
    """
    run = _Alternation(data, bank, cfg, names)
    T, M = bank.n_tasks, bank.n_kernels
    theta = _initial_theta(cfg, T, M)
    sols = run.alpha_step(theta)
    terms = run.terms(theta, sols)
    J = terms["total"]
    trace = [dict(iteration=0, objective=J, **_breakdown(terms), admm_iterations=0, step=0.0, residuals=None)]
    admm_iters = []
    state = None
    status = "max_iters"
    for r in range(1, cfg.outer_max_iters + 1):
        q = np.stack([compute_q(bank, t, run.labels[t], sols[t].alpha) for t in range(T)])
        try:
            target, state = solve_theta(
                q, cfg.lam, cfg.rho, cfg.admm, warm=state,
                adaptive_rho=cfg.adaptive_rho, projection=cfg.projection, divisor=cfg.divisor,
            )
        except ConvergenceError as exc:
            target, state = exc.best
            run.warnings.append(f"outer iteration {r}: {exc}")
        admm_iters.append(int(state.iterations))
        step = 1.0
        accepted = None
        for _ in range(cfg.max_backtracks + 1):
            cand = target if step == 1.0 else theta + step * (target - theta)
            cand = np.clip(cand, 0.0, None)
            cand_sols = run.alpha_step(cand, warm=sols)
            cand_terms = run.terms(cand, cand_sols)
            if cand_terms["total"] <= J:
                accepted = (cand, cand_sols, cand_terms)
                break
            step *= 0.5
        if accepted is None:
            status = "converged"
            log.debug("outer %d: no descent step found, stopping", r)
            break
        theta, sols, terms = accepted
        J_old, J = J, terms["total"]
        last = state.residuals[-1] if state.residuals else None
        trace.append(dict(
            iteration=r, objective=J, **_breakdown(terms), admm_iterations=int(state.iterations),
            step=step, residuals=list(last) if last else None,
        ))
        log.info("outer %d: objective %.10g step %.3g admm %d", r, J, step, state.iterations)
        if abs(J_old - J) <= cfg.outer_tol * max(abs(J_old), 1e-12):
            status = "converged"
            break
    return theta, sols, trace, admm_iters, status, run.warnings, run.labels


def _breakdown(terms):
    return {k: terms[k] for k in ("regularizer", "hinge", "fusion")}


def train(data, bank: KernelBank, cfg: TrainConfig) -> TrainedModel:
    """Fit all tasks jointly and return an immutable-by-convention model.

    With ``lam == 0`` the problem separates and each task is fitted on its
    own; the reported trace is the sum of the per-task traces.
    """
    start = time.perf_counter()
    T = bank.n_tasks
    if len(data) != T:
        raise InputError(f"{len(data)} tasks but the kernel bank holds {T}")
    names = [getattr(d, "name", f"task{t}") for t, d in enumerate(data)]
    for t, d in enumerate(data):
        y = d.y_train if hasattr(d, "y_train") else np.asarray(d)
        if y.size != bank.n_samples(t):
            raise InputError(f"task {names[t]!r}: {y.size} labels but {bank.n_samples(t)} Gram rows")

    if cfg.lam == 0 and T > 1:
        parts = []
        for t in range(T):
            sub_cfg = cfg
            if not isinstance(cfg.theta_init, str):
                sub_cfg = TrainConfig(**{**cfg.__dict__, "theta_init": np.asarray(cfg.theta_init)[t:t + 1]})
            sub_bank = KernelBank(bank.specs, [bank.grams[t]])
            parts.append(_run([data[t]], sub_bank, sub_cfg, [names[t]]))
        theta = np.vstack([p[0] for p in parts])
        sols = [p[1][0] for p in parts]
        labels = [p[6][0] for p in parts]
        trace = _merge_traces([p[2] for p in parts])
        admm_iters = [sum(x) for x in zip(*[p[3] for p in parts])] if parts else []
        status = "converged" if all(p[4] == "converged" for p in parts) else "max_iters"
        warnings = [w for p in parts for w in p[5]]
    else:
        theta, sols, trace, admm_iters, status, warnings, labels = _run(data, bank, cfg, names)

    terms = objective_terms(bank, theta, [s.alpha for s in sols], [s.bias for s in sols], labels, cfg.C, cfg.lam)
    check_feasible(theta, [s.alpha for s in sols], labels, cfg.C)
    support = [s.support for s in sols]
    Xtr = [d.X_train if hasattr(d, "X_train") else None for d in data]
    support_X = [
        (Xtr[t][support[t]] if Xtr[t] is not None else np.zeros((0, 0))) for t in range(T)
    ]
    if status != "converged":
        warnings.append(f"outer loop stopped after {cfg.outer_max_iters} iterations without meeting outer_tol")
    for w in warnings:
        log.warning(w)
    return TrainedModel(
        specs=list(bank.specs),
        task_names=names,
        theta=theta,
        alphas=[s.alpha for s in sols],
        biases=[s.bias for s in sols],
        labels=labels,
        support=support,
        support_X=support_X,
        objective=terms["total"],
        trace=trace,
        outer_iterations=len(trace) - 1,
        admm_iterations=admm_iters,
        status=status,
        warnings=warnings,
        wall_time=time.perf_counter() - start,
        config=cfg.to_dict(),
    )


def _merge_traces(traces):
    n = max(len(tr) for tr in traces)
    merged = []
    for r in range(n):
        rows = [tr[min(r, len(tr) - 1)] for tr in traces]
        merged.append(dict(
            iteration=r,
            objective=sum(x["objective"] for x in rows),
            regularizer=sum(x["regularizer"] for x in rows),
            hinge=sum(x["hinge"] for x in rows),
            fusion=0.0,
            admm_iterations=0,
            step=max(x["step"] for x in rows) if r else 0.0,
            residuals=None,
        ))
    return merged


def affinity_groups(D, eps: float = 1e-3) -> list[list[int]]:
    """Connected components of the graph joining tasks closer than ``eps``."""
    D = np.asarray(D, dtype=float)
    T = D.shape[0]
    parent = list(range(T))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for t in range(T):
        for s in range(t + 1, T):
            if D[t, s] < eps:
                a, b = find(t), find(s)
                if a != b:
                    parent[max(a, b)] = min(a, b)
    groups = {}
    for t in range(T):
        groups.setdefault(find(t), []).append(t)
    return sorted(groups.values())
