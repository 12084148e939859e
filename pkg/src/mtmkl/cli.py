"""Command-line entry point: ``mtmkl {train,grid,predict,affinity,bound}``.

Every successful command writes ``report.json`` into the output directory
and exits 0. Failures print one JSON object to stderr and exit nonzero:
1 for data or solver errors, 2 for usage errors, 70 for internal errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .data import Manifest, load_dense_csv, load_sparse_file, minmax_scale, stratified_split
from .errors import GridError, InputError, MtmklError, ParseError
from .evaluate import CONSENSUS_TOL, accuracies, consensus_gap, grid_search, mode_lambda
from .kernelbank import build_bank
from .trainer import TrainedModel, affinity_groups, bound_value, train
from .admm import fusion_penalty

log = logging.getLogger("mtmkl")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 70
TRACE_COLUMNS = ("iteration", "objective", "regularizer", "hinge", "fusion", "admm_iterations", "step")
RESIDUAL_COLUMNS = ("r_pair", "r_box", "r_dykstra", "s_theta", "s_box", "s_dykstra")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def fmt(x) -> str:
    return f"{float(x):.17g}"


def load_schema() -> dict:
    return json.loads(resources.files("mtmkl").joinpath("report.schema.json").read_text(encoding="utf-8"))


def validate_report(report: dict):
    jsonschema.validate(report, load_schema())


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_report(out: Path, report: dict) -> Path:
    validate_report(report)
    path = out / "report.json"
    _write_atomic(path, json.dumps(report, indent=2, allow_nan=False) + "\n")
    return path


def write_trace(path: Path, trace: list):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS + RESIDUAL_COLUMNS)
        for row in trace:
            res = row.get("residuals") or [""] * len(RESIDUAL_COLUMNS)
            w.writerow(
                [row["iteration"]]
                + [fmt(row[k]) for k in ("objective", "regularizer", "hinge", "fusion")]
                + [row["admm_iterations"], fmt(row["step"])]
                + [fmt(r) if r != "" else "" for r in res]
            )


def write_affinity(path: Path, names, D):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", *names])
        for name, row in zip(names, D):
            w.writerow([name, *(fmt(x) for x in row)])


def affinity_block(model: TrainedModel, eps: float) -> dict:
    D = model.affinity()
    return {"matrix": D.tolist(), "eps": eps, "groups": affinity_groups(D, eps)}


def load_tasks(cfg: RunConfig):
    if cfg.manifest is None:
        raise InputError("config does not name a manifest")
    tasks = Manifest.load(cfg.manifest).build_tasks(dense=cfg.dense)
    tasks = [stratified_split(d, cfg.train_frac, cfg.seed + t, cfg.balanced) for t, d in enumerate(tasks)]
    if cfg.scale:
        tasks = minmax_scale(tasks)
    return tasks


def _bound_block(cfg: RunConfig, model: TrainedModel, tasks):
    gamma = cfg.bound_gamma
    if gamma is None:
        # the fitted fusion penalty is only a candidate radius
        gamma = fusion_penalty(model.theta)
    if not gamma > 0:
        return None, "bound skipped: fusion penalty is zero, set bound.gamma explicitly"
    n = float(np.mean([d.y_train.size for d in tasks]))
    M, T = len(model.specs), model.n_tasks
    return {"gamma": gamma, "R": cfg.bound_R, "M": M, "n": n, "T": T,
            "value": bound_value(gamma, cfg.bound_R, M, n, T)}, None


def _fit_report(command, cfg, tasks, model, out, timing, extra=None) -> dict:
    names = model.task_names
    acc = accuracies(model, tasks, "test")
    warnings = list(model.warnings)
    report = {
        "format": "mtmkl-report",
        "version": 1,
        "command": command,
        "package_version": __version__,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "selected": {"C": model.config["C"], "lambda": model.config["lam"]},
        "tasks": names,
        "per_task_accuracy": acc,
        "mean_accuracy": float(np.mean(acc)),
        "objective": model.objective,
        "outer_iterations": model.outer_iterations,
        "admm_iterations": model.admm_iterations,
        "status": model.status,
        "theta": model.theta.tolist(),
    }
    if extra:
        report.update(extra)
    paths = {"model": "model.json", "trace": None, "affinity": None}
    model.save(out / "model.json")
    if cfg.emit_trace:
        write_trace(out / "trace.csv", model.trace)
        paths["trace"] = "trace.csv"
    if cfg.emit_affinity:
        report["affinity"] = affinity_block(model, cfg.affinity_eps)
        write_affinity(out / "affinity.csv", names, model.affinity())
        paths["affinity"] = "affinity.csv"
    if cfg.mode == "mtl":
        gap = consensus_gap(model)
        ok = gap <= CONSENSUS_TOL
        report["consensus"] = {"max_distance": gap, "tolerance": CONSENSUS_TOL, "ok": ok}
        if not ok:
            warnings.append(f"mtl consensus not reached: max pairwise distance {gap:.3g}")
    if cfg.emit_bound:
        block, why = _bound_block(cfg, model, tasks)
        if block is not None:
            report["bound"] = block
        else:
            warnings.append(why)
    report["warnings"] = warnings
    report["paths"] = paths
    report["config"] = cfg.echo()
    report["timing"] = timing
    return report


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    tasks = load_tasks(cfg)
    bank = build_bank(tasks, cfg.kernels, threads=cfg.threads)
    tcfg = replace(cfg.train, lam=mode_lambda(cfg.mode, cfg.train.lam, cfg.lambda_big))
    model = train(tasks, bank, tcfg)
    report = _fit_report("train", cfg, tasks, model, out, {})
    report["timing"] = {"train_seconds": model.wall_time, "total_seconds": time.perf_counter() - t0}
    print(f"mean_accuracy {fmt(report['mean_accuracy'])}")
    print(f"objective {fmt(model.objective)}")
    return report


def cmd_grid(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    tasks = load_tasks(cfg)
    if any(d.part("validation")[1].size == 0 for d in tasks):
        raise InputError("grid search needs a non-empty validation split for every task")
    bank = build_bank(tasks, cfg.kernels, threads=cfg.threads)
    lams = sorted({mode_lambda(cfg.mode, x, cfg.lambda_big) for x in cfg.grid_lambda})
    # the winner's model is reused: retraining with identical inputs is bitwise identical
    winner, points = grid_search(tasks, bank, cfg.train, cfg.grid_C, lams, threads=cfg.threads)
    extra = {
        "validation_accuracy": winner.validation_accuracy,
        "grid": [p.summary() for p in points],
    }
    report = _fit_report("grid", cfg, tasks, winner.model, out, {}, extra)
    report["timing"] = {"total_seconds": time.perf_counter() - t0}
    print(f"selected C {fmt(winner.C)} lambda {fmt(winner.lam)}")
    print(f"validation_accuracy {fmt(winner.validation_accuracy)}")
    print(f"mean_accuracy {fmt(report['mean_accuracy'])}")
    return report


def _base_report(command: str, seed=None) -> dict:
    r = {"format": "mtmkl-report", "version": 1, "command": command, "package_version": __version__}
    if seed is not None:
        r["seed"] = seed
    return r


def _model_task(model: TrainedModel, task) -> int:
    if task is None:
        if model.n_tasks != 1:
            raise InputError(f"model has {model.n_tasks} tasks; choose one with --task")
        return 0
    if task in model.task_names:
        return model.task_names.index(task)
    raise InputError(f"unknown task {task!r}; model tasks are {model.task_names}")


def cmd_predict(args, out: Path) -> dict:
    t0 = time.perf_counter()
    if args.model is None or args.data is None:
        raise UsageError("predict needs --model and --data")
    model = TrainedModel.load(args.model)
    t = _model_task(model, args.task)
    d = model.support_X[t].shape[1] if model.support_X[t].size else None
    load = load_dense_csv if args.dense else load_sparse_file
    X, y = load(args.data, n_features=d)
    if X.shape[0] == 0:
        raise InputError(f"{args.data}: no samples")
    f = model.decision_function(t, X)
    pred = np.where(f >= 0, 1.0, -1.0)
    path = out / "predictions.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "decision", "label"])
        for i, (fi, pi) in enumerate(zip(f, pred)):
            w.writerow([i, fmt(fi), int(pi)])
    acc = float(np.mean(pred == y)) if np.all(np.isin(y, (-1.0, 1.0))) else None
    report = _base_report("predict")
    report["predictions"] = {"task": model.task_names[t], "count": int(X.shape[0]), "accuracy": acc,
                             "path": "predictions.csv"}
    report["timing"] = {"total_seconds": time.perf_counter() - t0}
    if acc is not None:
        print(f"accuracy {fmt(acc)}")
    return report


def cmd_affinity(args, out: Path) -> dict:
    t0 = time.perf_counter()
    if args.model is None:
        raise UsageError("affinity needs --model")
    model = TrainedModel.load(args.model)
    eps = args.eps
    if not eps > 0:
        raise InputError("--eps must be positive")
    write_affinity(out / "affinity.csv", model.task_names, model.affinity())
    report = _base_report("affinity")
    report["tasks"] = model.task_names
    report["affinity"] = affinity_block(model, eps)
    report["paths"] = {"affinity": "affinity.csv"}
    report["timing"] = {"total_seconds": time.perf_counter() - t0}
    for g in report["affinity"]["groups"]:
        print("group " + " ".join(model.task_names[i] for i in g))
    return report


def cmd_bound(args, out: Path) -> dict:
    t0 = time.perf_counter()
    vals = {k: getattr(args, k) for k in ("gamma", "R", "M", "n", "T")}
    missing = [k for k, v in vals.items() if v is None]
    if missing:
        raise UsageError("bound needs " + ", ".join("--" + k for k in missing))
    value = bound_value(**vals)
    report = _base_report("bound")
    report["bound"] = {**vals, "value": value}
    report["timing"] = {"total_seconds": time.perf_counter() - t0}
    print(fmt(value))
    return report


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mtmkl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mtmkl {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path)
        sp.add_argument("--output", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("-v", "--verbose", action="count", default=0)

    for name in ("train", "grid"):
        sp = sub.add_parser(name, help=f"{name} on the tasks of a manifest")
        common(sp)
        sp.add_argument("--mode", choices=("ours", "stl", "mtl"))
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--c", dest="C", type=float)
        sp.add_argument("--rho", type=float)
        sp.add_argument("--manifest", type=Path)

    sp = sub.add_parser("predict", help="decision values of one task of a saved model")
    common(sp)
    sp.add_argument("--model", type=Path)
    sp.add_argument("--data", type=Path)
    sp.add_argument("--task")
    sp.add_argument("--dense", action="store_true")

    sp = sub.add_parser("affinity", help="pairwise kernel-weight distances of a saved model")
    common(sp)
    sp.add_argument("--model", type=Path)
    sp.add_argument("--eps", type=float, default=1e-3)

    sp = sub.add_parser("bound", help="empirical Rademacher complexity bound")
    common(sp)
    for k, typ in (("gamma", float), ("R", float), ("M", int), ("n", int), ("T", int)):
        sp.add_argument(f"--{k}", type=typ)
    return p


def _error_payload(kind: str, exc: BaseException) -> dict:
    err = {"type": kind, "message": str(exc)}
    if isinstance(exc, ParseError):
        err["line"] = exc.line
        err["path"] = None if exc.path is None else str(exc.path)
    if isinstance(exc, GridError):
        err["failures"] = exc.failures
    if isinstance(exc, jsonschema.ValidationError):
        err["message"] = exc.message
    return {"error": err}


def _fail(code: int, kind: str, exc: BaseException) -> int:
    sys.stderr.write(json.dumps(_error_payload(kind, exc), sort_keys=True) + "\n")
    return code


COMMANDS = {"train": cmd_train, "grid": cmd_grid, "predict": cmd_predict, "affinity": cmd_affinity,
            "bound": cmd_bound}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "UsageError", exc)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        overrides = {"seed": args.seed, "output": args.output, "threads": args.threads}
        if args.command in ("train", "grid"):
            overrides.update(mode=args.mode, C=args.C, rho=args.rho, manifest=args.manifest)
            overrides["lambda"] = args.lam
        cfg = load_config(args.config, overrides)
        out = cfg.output
        out.mkdir(parents=True, exist_ok=True)
        if args.command in ("train", "grid"):
            report = COMMANDS[args.command](cfg, out)
        else:
            report = COMMANDS[args.command](args, out)
        write_report(out, report)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "UsageError", exc)
    except MtmklError as exc:
        return _fail(EXIT_ERROR, type(exc).__name__, exc)
    except OSError as exc:
        return _fail(EXIT_ERROR, "IOError", exc)
    except jsonschema.ValidationError as exc:
        return _fail(EXIT_INTERNAL, "ReportSchemaError", exc)
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        return _fail(EXIT_INTERNAL, type(exc).__name__, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
