"""Multi-task multiple kernel learning with a pairwise group-lasso fusion penalty."""

__version__ = "0.1.0"

from .admm import StoppingTolerances, project_box_l1, shrink, solve_theta  # noqa: E402
from .data import TaskDataset, one_vs_one, stratified_split  # noqa: E402
from .kernelbank import KernelBank, KernelSpec, build_bank, combine, default_menu  # noqa: E402
from .svm import BACKEND, solve_dual  # noqa: E402
from .trainer import TrainConfig, TrainedModel, bound_value, primal_objective, train  # noqa: E402

__all__ = [
    "BACKEND",
    "KernelBank",
    "KernelSpec",
    "StoppingTolerances",
    "TaskDataset",
    "TrainConfig",
    "TrainedModel",
    "bound_value",
    "build_bank",
    "combine",
    "default_menu",
    "one_vs_one",
    "primal_objective",
    "project_box_l1",
    "shrink",
    "solve_dual",
    "solve_theta",
    "stratified_split",
    "train",
]
