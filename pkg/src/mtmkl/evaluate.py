"""Accuracy, baseline modes and (C, lambda) model selection."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .admm import pairwise_distances
from .errors import GridError, InputError, MtmklError
from .trainer import TrainConfig, TrainedModel, train

log = logging.getLogger(__name__)

MODES = ("ours", "stl", "mtl")
LAMBDA_BIG = 1e6
CONSENSUS_TOL = 1e-3


def default_grid() -> list[float]:
    return [2.0**p for p in range(-10, 11)]


def accuracies(model: TrainedModel, tasks, which: str = "test") -> list[float]:
    out = []
    for t, d in enumerate(tasks):
        X, y = d.part(which)
        if y.size == 0:
            raise InputError(f"task {d.name!r} has an empty {which} split")
        out.append(float(np.mean(model.predict(t, X) == y)))
    return out


def mode_lambda(mode: str, lam: float, lambda_big: float = LAMBDA_BIG) -> float:
    if mode not in MODES:
        raise InputError(f"unknown mode {mode!r}")
    if mode == "stl":
        return 0.0
    if mode == "mtl":
        return float(lambda_big)
    return float(lam)


def consensus_gap(model: TrainedModel) -> float:
    if model.n_tasks < 2:
        return 0.0
    return float(pairwise_distances(model.theta).max())


@dataclass
class GridPoint:
    C: float
    lam: float
    validation_accuracy: float | None = None
    model: TrainedModel | None = None
    error: str | None = None

    def summary(self) -> dict:
        return {
            "C": self.C,
            "lambda": self.lam,
            "validation_accuracy": self.validation_accuracy,
            "error": self.error,
        }


def select(points):
    """Best mean validation accuracy; ties go to smaller lambda, then smaller C."""
    ok = [p for p in points if p.error is None]
    if not ok:
        raise GridError(
            "every grid point failed",
            failures={f"C={p.C!r},lambda={p.lam!r}": p.error for p in points},
        )
    return min(ok, key=lambda p: (-p.validation_accuracy, p.lam, p.C))


def grid_search(tasks, bank, base: TrainConfig, Cs, lams, threads: int = 1):
    """Train every (C, lambda) pair on the training split, score on validation.

    Returns ``(winner, points)``; the winner keeps its trained model.
    """
    Cs = sorted(set(float(c) for c in Cs))
    lams = sorted(set(float(x) for x in lams))
    if not Cs or not lams:
        raise InputError("grid is empty")

    def fit(point):
        try:
            cfg = replace(base, C=point.C, lam=point.lam, threads=1 if threads > 1 else base.threads)
            point.model = train(tasks, bank, cfg)
            point.validation_accuracy = float(np.mean(accuracies(point.model, tasks, "validation")))
        except MtmklError as exc:
            point.error = f"{type(exc).__name__}: {exc}"
            log.warning("grid point C=%g lambda=%g failed: %s", point.C, point.lam, exc)
        return point

    points = [GridPoint(C, lam) for lam in lams for C in Cs]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            points = list(pool.map(fit, points))
    else:
        points = [fit(p) for p in points]
    winner = select(points)
    for p in points:
        if p is not winner:
            p.model = None
    return winner, points
