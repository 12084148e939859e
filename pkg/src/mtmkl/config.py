"""Run configuration: a YAML document plus command-line overrides.

Recognized keys (all optional except ``manifest`` for train/grid)::

    manifest: data/manifest.json   # relative to the config file
    dense: false                   # data files are CSV with the label first
    scale: false                   # min-max scale features on training statistics
    seed: 0
    train_frac: 0.5
    balanced: false                # equal class counts in the training split
    mode: ours                     # ours | stl | mtl
    lambda_big: 1.0e6              # lambda used by mode mtl
    kernels: default               # or a list of {kind, degree, coef0, spread, convention}
    gaussian_convention: sigma     # sigma | gamma, for the default menu
    train: {C: 1.0, lambda: 0.0, rho: 1.0, outer_tol: 1.0e-4, outer_max_iters: 50,
            svm_tol: 1.0e-3, adaptive_rho: true, projection: exact, divisor: derived,
            admm: {abs_tol: 1.0e-4, rel_tol: 1.0e-3, max_iters: 5000}}
    grid: {C: [...], lambda: [...]}  # default 2^-10 .. 2^10 for both
    output: out
    emit: {trace: true, affinity: true, bound: false}
    affinity_eps: 1.0e-3
    bound: {gamma: null, R: 1.0}   # gamma defaults to the fitted fusion penalty
    threads: 1                     # also capped by MTMKL_THREADS
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .admm import StoppingTolerances
from .errors import InputError
from .evaluate import LAMBDA_BIG, MODES, default_grid
from .kernelbank import KernelSpec, default_menu
from .trainer import TrainConfig

TRAIN_KEYS = {
    "C": "C", "lambda": "lam", "rho": "rho", "outer_tol": "outer_tol",
    "outer_max_iters": "outer_max_iters", "svm_tol": "svm_tol", "adaptive_rho": "adaptive_rho",
    "projection": "projection", "divisor": "divisor", "max_backtracks": "max_backtracks",
}
TOP_KEYS = {
    "manifest", "dense", "scale", "seed", "train_frac", "balanced", "mode", "lambda_big", "kernels",
    "gaussian_convention", "train", "grid", "output", "emit", "affinity_eps", "bound", "threads",
}


@dataclass
class RunConfig:
    manifest: Path | None = None
    dense: bool = False
    scale: bool = False
    seed: int = 0
    train_frac: float = 0.5
    balanced: bool = False
    mode: str = "ours"
    lambda_big: float = LAMBDA_BIG
    kernels: list = field(default_factory=default_menu)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid_C: list = field(default_factory=default_grid)
    grid_lambda: list = field(default_factory=default_grid)
    output: Path = Path("out")
    emit_trace: bool = True
    emit_affinity: bool = True
    emit_bound: bool = False
    affinity_eps: float = 1e-3
    bound_gamma: float | None = None
    bound_R: float = 1.0
    threads: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if any(not c > 0 for c in self.grid_C) or any(not x > 0 for x in self.grid_lambda):
            raise InputError("grid values must be positive")
        if not self.grid_C or not self.grid_lambda:
            raise InputError("grid must not be empty")
        if self.threads < 1:
            raise InputError("threads must be at least 1")

    def echo(self) -> dict:
        """Plain-data view of the configuration for the report."""
        t = self.train
        return {
            "manifest": None if self.manifest is None else str(self.manifest),
            "dense": self.dense,
            "scale": self.scale,
            "seed": self.seed,
            "train_frac": self.train_frac,
            "balanced": self.balanced,
            "mode": self.mode,
            "lambda_big": self.lambda_big,
            "kernels": [k.to_dict() for k in self.kernels],
            "train": {
                "C": t.C, "lambda": t.lam, "rho": t.rho, "outer_tol": t.outer_tol,
                "outer_max_iters": t.outer_max_iters, "svm_tol": t.svm_tol,
                "adaptive_rho": t.adaptive_rho, "projection": t.projection, "divisor": t.divisor,
                "max_backtracks": t.max_backtracks,
                "admm": {"abs_tol": t.admm.abs_tol, "rel_tol": t.admm.rel_tol, "max_iters": t.admm.max_iters},
            },
            "grid": {"C": list(self.grid_C), "lambda": list(self.grid_lambda)},
            "affinity_eps": self.affinity_eps,
            "threads": self.threads,
        }


def env_thread_cap() -> int | None:
    raw = os.environ.get("MTMKL_THREADS")
    if not raw:
        return None
    try:
        v = int(raw)
    except ValueError:
        raise InputError(f"MTMKL_THREADS must be an integer, got {raw!r}") from None
    return max(v, 1)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    doc = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise InputError("config must be a mapping")
        base = path.parent
    return build_config(doc, base, overrides or {})


def _float_list(v, name):
    if not isinstance(v, (list, tuple)):
        raise InputError(f"{name} must be a list of numbers")
    try:
        return [float(x) for x in v]
    except (TypeError, ValueError):
        raise InputError(f"{name} must be a list of numbers") from None


def build_config(doc: dict, base=Path("."), overrides: dict | None = None) -> RunConfig:
    doc = copy.deepcopy(doc)
    unknown = set(doc) - TOP_KEYS
    if unknown:
        raise InputError(f"unknown config keys {sorted(unknown)}")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    conv = doc.get("gaussian_convention", "sigma")
    kernels = doc.get("kernels", "default")
    if kernels == "default":
        specs = default_menu(conv)
    elif isinstance(kernels, list) and kernels:
        specs = [KernelSpec.from_dict(k) for k in kernels]
    else:
        raise InputError("kernels must be 'default' or a non-empty list")

    tdoc = dict(doc.get("train") or {})
    admm = tdoc.pop("admm", None) or {}
    bad = set(tdoc) - set(TRAIN_KEYS)
    if bad:
        raise InputError(f"unknown train keys {sorted(bad)}")
    bad = set(admm) - {"abs_tol", "rel_tol", "max_iters"}
    if bad:
        raise InputError(f"unknown admm keys {sorted(bad)}")
    targs = {TRAIN_KEYS[k]: v for k, v in tdoc.items()}
    for flag, key in (("C", "C"), ("lambda", "lam"), ("rho", "rho")):
        if flag in overrides:
            targs[key] = float(overrides[flag])
    seed = int(overrides.get("seed", doc.get("seed", 0)))
    threads = int(overrides.get("threads", doc.get("threads", 1)))
    cap = env_thread_cap()
    if cap is not None:
        threads = min(threads, cap)
    try:
        tcfg = TrainConfig(**targs, admm=StoppingTolerances(**admm), seed=seed, threads=threads)
    except TypeError as exc:
        raise InputError(str(exc)) from None

    grid = doc.get("grid") or {}
    grid_C = _float_list(grid.get("C", default_grid()), "grid.C")
    grid_lambda = _float_list(grid.get("lambda", default_grid()), "grid.lambda")
    emit = doc.get("emit") or {}
    bound = doc.get("bound") or {}
    manifest = overrides.get("manifest", doc.get("manifest"))
    if manifest is not None:
        manifest = Path(manifest)
        if not manifest.is_absolute() and "manifest" not in overrides:
            manifest = Path(base) / manifest
    output = Path(overrides.get("output", doc.get("output", "out")))

    return RunConfig(
        manifest=manifest,
        dense=bool(doc.get("dense", False)),
        scale=bool(doc.get("scale", False)),
        seed=seed,
        train_frac=float(doc.get("train_frac", 0.5)),
        balanced=bool(doc.get("balanced", False)),
        mode=str(overrides.get("mode", doc.get("mode", "ours"))),
        lambda_big=float(doc.get("lambda_big", LAMBDA_BIG)),
        kernels=specs,
        train=tcfg,
        grid_C=grid_C,
        grid_lambda=grid_lambda,
        output=output,
        emit_trace=bool(emit.get("trace", True)),
        emit_affinity=bool(emit.get("affinity", True)),
        emit_bound=bool(emit.get("bound", False)),
        affinity_eps=float(doc.get("affinity_eps", 1e-3)),
        bound_gamma=None if bound.get("gamma") is None else float(bound["gamma"]),
        bound_R=float(bound.get("R", 1.0)),
        threads=threads,
    )
