"""Synthetic multi-task problems with a planted task grouping.

Tasks in the "fine" group have a checkerboard decision boundary that only a
narrow Gaussian kernel resolves; tasks in the "coarse" group have a tilted
linear boundary best served by a wide Gaussian. Within a group the tasks share
their boundary family but differ by a random phase or tilt.
"""
from __future__ import annotations

import numpy as np

from .data import TaskDataset
from .kernelbank import KernelSpec


def planted_menu() -> list[KernelSpec]:
    return [KernelSpec.gaussian(s) for s in (0.35, 1.5, 6.0)]


def _fine_task(rng, n, freq, noise):
    X = rng.uniform(-np.pi, np.pi, size=(n, 2))
    phase = rng.uniform(-0.3, 0.3, size=2)
    f = np.sin(freq * X[:, 0] + phase[0]) * np.sin(freq * X[:, 1] + phase[1])
    y = np.where(f >= 0, 1.0, -1.0)
    return X, _flip(rng, y, noise)


def _coarse_task(rng, n, noise):
    X = rng.uniform(-np.pi, np.pi, size=(n, 2))
    ang = rng.uniform(-0.35, 0.35)
    w = np.array([np.cos(ang), np.sin(ang)])
    y = np.where(X @ w >= 0, 1.0, -1.0)
    return X, _flip(rng, y, noise)


def _flip(rng, y, noise):
    flip = rng.random(y.size) < noise
    y = y.copy()
    y[flip] *= -1
    if not (np.any(y > 0) and np.any(y < 0)):
        y[0] = -y[0]
    return y


def planted_groups(seed: int, tasks_per_group: int = 3, n_per_task: int = 120,
                   freq: float = 1.5, noise: float = 0.0):
    """Return ``(tasks, groups)`` with ``groups[t]`` the planted group id of task ``t``."""
    rng = np.random.default_rng(seed)
    tasks, groups = [], []
    for g in range(2):
        for k in range(tasks_per_group):
            if g == 0:
                X, y = _fine_task(rng, n_per_task, freq, noise)
            else:
                X, y = _coarse_task(rng, n_per_task, noise)
            tasks.append(TaskDataset(f"{'fine' if g == 0 else 'coarse'}{k}", X, y))
            groups.append(g)
    return tasks, np.array(groups)
