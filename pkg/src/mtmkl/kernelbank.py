"""Base kernels, Gram matrix normalization and the per-task kernel bank.

Every Gram matrix in a bank is cosine-normalized so that its diagonal is
exactly one. Combined kernels are nonnegative weightings of the base Grams.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateSampleError, InputError

DIAG_EPS = 1e-12

KINDS = ("linear", "polynomial", "gaussian")


@dataclass(frozen=True)
class KernelSpec:
    """One entry of the kernel menu.

    ``spread`` is the Gaussian bandwidth. With ``convention="sigma"`` the
    kernel is ``exp(-|x-y|^2 / (2 spread^2))``; with ``convention="gamma"``
    it is ``exp(-spread |x-y|^2)``.
    """

    kind: str
    degree: int = 2
    coef0: float = 1.0
    spread: float = 1.0
    convention: str = "sigma"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise InputError(f"polynomial degree must be a positive integer, got {self.degree}")
        if self.kind == "gaussian":
            if not self.spread > 0:
                raise InputError(f"gaussian spread must be > 0, got {self.spread}")
            if self.convention not in ("sigma", "gamma"):
                raise InputError(f"unknown gaussian convention {self.convention!r}")

    @classmethod
    def linear(cls):
        return cls("linear")

    @classmethod
    def polynomial(cls, degree=2, coef0=1.0):
        return cls("polynomial", degree=degree, coef0=coef0)

    @classmethod
    def gaussian(cls, spread, convention="sigma"):
        return cls("gaussian", spread=spread, convention=convention)

    def to_dict(self) -> dict:
        if self.kind == "linear":
            return {"kind": "linear"}
        if self.kind == "polynomial":
            return {"kind": "polynomial", "degree": int(self.degree), "coef0": float(self.coef0)}
        return {"kind": "gaussian", "spread": float(self.spread), "convention": self.convention}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        if kind is None:
            raise InputError("kernel entry is missing 'kind'")
        unknown = set(d) - {"degree", "coef0", "spread", "convention"}
        if unknown:
            raise InputError(f"unknown kernel keys {sorted(unknown)}")
        return cls(kind, **d)

    @property
    def gamma(self) -> float:
        if self.convention == "gamma":
            return float(self.spread)
        return 1.0 / (2.0 * float(self.spread) ** 2)


def default_menu(convention="sigma") -> list[KernelSpec]:
    """1 linear, 1 degree-2 polynomial and 8 Gaussians with spreads 2^0..2^7."""
    menu = [KernelSpec.linear(), KernelSpec.polynomial(2, 1.0)]
    menu += [KernelSpec.gaussian(2.0**p, convention) for p in range(8)]
    return menu


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Evaluate the raw (unnormalized) kernel on two feature vectors."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape or x.size == 0:
        raise InputError(f"dimension mismatch: {x.size} vs {y.size}")
    if spec.kind == "linear":
        return float(x @ y)
    if spec.kind == "polynomial":
        return float((x @ y + spec.coef0) ** spec.degree)
    d = x - y
    return math.exp(-spec.gamma * float(d @ d))


def normalize_kernel(raw: Callable, eps: float = DIAG_EPS) -> Callable:
    """Wrap ``raw`` so that ``k(x, y) = raw(x, y) / sqrt(raw(x, x) raw(y, y))``."""

    def k(x, y):
        kxx = raw(x, x)
        if kxx <= eps:
            raise DegenerateSampleError(f"sample {np.asarray(x).tolist()} has k(x,x)={kxx}", sample=x)
        kyy = raw(y, y)
        if kyy <= eps:
            raise DegenerateSampleError(f"sample {np.asarray(y).tolist()} has k(y,y)={kyy}", sample=y)
        return raw(x, y) / math.sqrt(kxx * kyy)

    return k


def _sq_dists(A, B):
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    np.maximum(d, 0.0, out=d)
    return d


def raw_gram(spec: KernelSpec, A, B=None) -> np.ndarray:
    """Unnormalized kernel matrix between the rows of ``A`` and ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise InputError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.kind == "linear":
        return A @ B.T
    if spec.kind == "polynomial":
        return (A @ B.T + spec.coef0) ** spec.degree
    if B is A:
        d = _sq_dists(A, A)
        np.fill_diagonal(d, 0.0)
    else:
        d = _sq_dists(A, B)
    return np.exp(-spec.gamma * d)


def _self_similarity(spec, A):
    if spec.kind == "gaussian":
        return np.ones(A.shape[0])
    sq = np.einsum("ij,ij->i", A, A)
    if spec.kind == "linear":
        return sq
    return (sq + spec.coef0) ** spec.degree


def _check_diag(diag, spec, eps, which=""):
    bad = np.flatnonzero(diag <= eps)
    if bad.size:
        i = int(bad[0])
        raise DegenerateSampleError(
            f"{which}sample {i} has k(x,x)={diag[i]:.3g} <= {eps:g} under {spec.kind} kernel",
            sample=i,
            kernel=spec,
        )


def gram(spec: KernelSpec, X, eps: float = DIAG_EPS) -> np.ndarray:
    """Normalized, exactly symmetric Gram matrix with unit diagonal."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    K = raw_gram(spec, X)
    diag = np.diag(K).copy()
    _check_diag(diag, spec, eps)
    s = 1.0 / np.sqrt(diag)
    K = K * s[:, None] * s[None, :]
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    return K


def cross_gram(spec: KernelSpec, A, B, eps: float = DIAG_EPS) -> np.ndarray:
    """Normalized kernel values between rows of ``A`` (e.g. support vectors) and ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    K = raw_gram(spec, A, B)
    da = _self_similarity(spec, A)
    db = _self_similarity(spec, B)
    _check_diag(da, spec, eps, "reference ")
    _check_diag(db, spec, eps, "query ")
    return K / np.sqrt(da)[:, None] / np.sqrt(db)[None, :]


class KernelBank:
    """Normalized Gram matrices for every (task, kernel) pair.

    ``grams[t]`` is a read-only array of shape ``(M, n_t, n_t)`` so that
    ``grams[t][m]`` is the Gram matrix of kernel ``m`` on task ``t``.
    """

    def __init__(self, specs: Sequence[KernelSpec], grams: Sequence[np.ndarray]):
        self.specs = list(specs)
        M = len(self.specs)
        self.grams = []
        for t, G in enumerate(grams):
            G = np.array(G, dtype=float)
            if G.ndim != 3 or G.shape[0] != M or G.shape[1] != G.shape[2]:
                raise InputError(f"task {t}: expected Gram stack of shape (M={M}, n, n), got {G.shape}")
            G.flags.writeable = False
            self.grams.append(G)

    @property
    def n_tasks(self) -> int:
        return len(self.grams)

    @property
    def n_kernels(self) -> int:
        return len(self.specs)

    def n_samples(self, t: int) -> int:
        return self.grams[t].shape[1]

    def combine(self, t: int, theta_t) -> np.ndarray:
        return combine(self, t, theta_t)


def build_bank(tasks, specs: Sequence[KernelSpec], threads: int = 1, eps: float = DIAG_EPS) -> KernelBank:
    """Compute every normalized Gram matrix once, on each task's training split.

    ``tasks`` holds :class:`~mtmkl.data.TaskDataset` objects or raw feature
    matrices.
    """
    specs = list(specs)
    if not specs:
        raise InputError("kernel menu is empty")
    Xs = []
    for t, task in enumerate(tasks):
        X = task.X_train if hasattr(task, "X_train") else np.atleast_2d(np.asarray(task, dtype=float))
        if X.shape[0] < 2:
            raise InputError(f"task {t} has {X.shape[0]} training samples, need at least 2")
        Xs.append(X)

    def one(args):
        t, m = args
        try:
            return gram(specs[m], Xs[t], eps)
        except DegenerateSampleError as exc:
            raise DegenerateSampleError(f"task {t}, kernel {m}: {exc}", exc.sample, exc.kernel) from None

    jobs = [(t, m) for t in range(len(Xs)) for m in range(len(specs))]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            flat = list(pool.map(one, jobs))
    else:
        flat = [one(j) for j in jobs]
    M = len(specs)
    stacks = [np.stack(flat[t * M:(t + 1) * M]) for t in range(len(Xs))]
    return KernelBank(specs, stacks)


def combine(bank: KernelBank, t: int, theta_t) -> np.ndarray:
    """``sum_m theta_t[m] * K_t^m``."""
    theta_t = np.asarray(theta_t, dtype=float).ravel()
    if theta_t.shape != (bank.n_kernels,):
        raise InputError(f"theta_t must have length {bank.n_kernels}, got {theta_t.size}")
    if np.any(theta_t < 0):
        raise InputError(f"kernel weights must be nonnegative, got {theta_t.tolist()}")
    return np.tensordot(theta_t, bank.grams[t], axes=1)
