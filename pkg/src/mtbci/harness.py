"""Evaluation protocols: leave-one-task-out learning curves, session-by-session transfer,
and export of learned spatial/spectral patterns."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .adaptation import (DEFAULT_FOLDS, DEFAULT_LAMBDA_GRID, adapt_fd, adapt_flat, cross_validate_lambda,
                         score_trials, sign_labels)
from .baselines import pool_tasks, ridge_fd_train, ridge_train
from .core import MtlFit, train_multitask
from .data import GaussianPrior, TaskCollection, TaskDataset, TrainConfig, flatten_trials, split_task
from .errors import SolverError, ValidationError
from .fd import FdFit, FdModel, canonicalize, train_multitask_fd

log = logging.getLogger(__name__)

ALGORITHMS = ("mt", "mt_fd", "rr", "rr_fd")
MODES = ("pooled", "single")


def _check_algorithm(algorithm, mode):
    if algorithm not in ALGORITHMS:
        raise ValidationError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; choose from {MODES}")


def _train_prior(algorithm, history: TaskCollection, config: TrainConfig):
    if algorithm == "mt":
        return train_multitask(history, config)
    if algorithm == "mt_fd":
        return train_multitask_fd(history, config)
    return None


def _choose_lambda(train: TaskDataset, mode, priors, config, grid, folds, seed):
    counts = [int(np.count_nonzero(train.labels == c)) for c in (-1, 1)]
    k = min(folds, *counts)
    if k < 2 or len(grid) == 1:
        return float(grid[0]) if len(grid) == 1 else config.lam
    return cross_validate_lambda(train, grid, k, mode=mode, priors=priors, seed=seed, config=config)


def _evaluate(algorithm, mode, history: TaskCollection, fit, train: TaskDataset, test: TaskDataset,
              config: TrainConfig, grid, folds, seed):
    """Train on ``train`` (plus ``history`` where the algorithm uses it) and score ``test``.

    Returns ``(n_correct, lambda_used)``.
    """
    e, f = test.shape
    lam = None
    if algorithm == "mt":
        if train.n_trials == 0:
            model = fit.prior.mean
        else:
            lam = _choose_lambda(train, "flat", fit.prior, config, grid, folds, seed)
            model = adapt_flat(train, fit.prior, lam)
    elif algorithm == "mt_fd":
        if train.n_trials == 0:
            model = fit.mean_model()
        else:
            lam = _choose_lambda(train, "fd", (fit.prior_w, fit.prior_alpha), config, grid, folds, seed)
            model = adapt_fd(train, fit.prior_w, fit.prior_alpha, lam, config)
    else:
        data = pool_tasks(history, extra=train) if mode == "pooled" else train
        if data.n_trials == 0:
            model = np.zeros(e * f) if algorithm == "rr" else FdModel(np.ones(e), np.zeros(f))
        else:
            kind = "flat" if algorithm == "rr" else "fd"
            lam = _choose_lambda(data, kind, None, config, grid, folds, seed)
            if algorithm == "rr":
                model = ridge_train(*flatten_trials(data), lam)
            else:
                model = ridge_fd_train(data, lam, config)
    pred = sign_labels(score_trials(test.features, model))
    return int(np.count_nonzero(pred == test.labels)), lam


def _cell(task_id, n, correct, n_test, lam):
    return {"task": task_id, "n_per_class": n, "lambda": lam, "n_test": n_test, "correct": correct,
            "accuracy": round(correct / n_test, 4)}


def _describe(values) -> dict:
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"mean": round(float(v.mean()), 4), "std": round(float(v.std()), 4), "min": round(float(v.min()), 4),
            "q1": round(float(q1), 4), "median": round(float(med), 4), "q3": round(float(q3), 4),
            "max": round(float(v.max()), 4)}


def run_loso(collection: TaskCollection, algorithm: str, mode: str, trial_grid, config: TrainConfig,
             seed: int = 0, lambda_grid=DEFAULT_LAMBDA_GRID, cv_folds: int = DEFAULT_FOLDS,
             workers: int = 1) -> dict:
    """Hold out each task in turn, train on the rest, adapt with ``n`` trials per class, test on the remainder.

    Multitask priors are learned once per held-out task with ``config.lam``;
    the adaptation lambda is cross-validated per (task, n) cell. Held-out
    tasks are processed on ``workers`` threads and merged in manifest order.
    """
    _check_algorithm(algorithm, mode)
    trial_grid = [int(n) for n in trial_grid]
    if algorithm in ("mt", "mt_fd") or mode == "pooled":
        if len(collection) < 2:
            raise ValidationError("leave-one-task-out transfer needs at least 2 tasks")
    for task in collection:
        for n in trial_grid:
            counts = [int(np.count_nonzero(task.labels == c)) for c in (-1, 1)]
            if min(counts) < n or task.n_trials <= 2 * n:
                raise ValidationError(f"task {task.task_id!r}: cannot take {n} training trials per class "
                                      f"and keep test trials (has {counts[0]}/{counts[1]})")

    def job(i):
        test_task = collection[i]
        history = collection.without(i) if len(collection) > 1 else collection
        try:
            fit = _train_prior(algorithm, history, config)
            cells = []
            for n in trial_grid:
                train, test = split_task(test_task, n, seed + i)
                correct, lam = _evaluate(algorithm, mode, history, fit, train, test, config,
                                         lambda_grid, cv_folds, seed)
                cells.append(_cell(test_task.task_id, n, correct, test.n_trials, lam))
            return cells
        except SolverError as exc:
            raise SolverError(f"held-out task {test_task.task_id!r}: {exc}") from exc

    indices = range(len(collection))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_task = list(pool.map(job, indices))
    else:
        per_task = [job(i) for i in indices]
    cells = [c for group in per_task for c in group]
    summary = []
    for n in trial_grid:
        accs = [c["correct"] / c["n_test"] for c in cells if c["n_per_class"] == n]
        summary.append({"n_per_class": n, **_describe(accs)})
    return {"protocol": "loso", "algorithm": algorithm, "mode": mode, "seed": seed, "trial_grid": trial_grid,
            "lambda_grid": [float(v) for v in lambda_grid], "cv_folds": cv_folds, "config": config.to_dict(),
            "cells": cells, "summary": summary}


def run_session_transfer(collection: TaskCollection, algorithm: str, mode: str, config: TrainConfig,
                         adapt_block_size: int = 20, seed: int = 0, lambda_grid=DEFAULT_LAMBDA_GRID,
                         cv_folds: int = DEFAULT_FOLDS) -> dict:
    """Sequential protocol over sessions in manifest order.

    For each session ``k >= 1``: learn from sessions ``0..k-1``, adapt on the
    first ``adapt_block_size`` trials of session ``k`` (on-disk order) and
    test on the rest. Sessions without trials beyond the first block are
    skipped with a warning.
    """
    _check_algorithm(algorithm, mode)
    if len(collection) < 2:
        raise ValidationError("session transfer needs at least 2 sessions")
    if adapt_block_size < 0:
        raise ValidationError("adapt_block_size must be non-negative")
    cells, skipped = [], []
    for k in range(1, len(collection)):
        session = collection[k]
        if session.n_trials <= adapt_block_size:
            log.warning("session %s has a single block (%d trials); skipped", session.task_id, session.n_trials)
            skipped.append(session.task_id)
            continue
        history = TaskCollection(collection.tasks[:k], collection.band_labels)
        block = session.subset(np.arange(adapt_block_size))
        test = session.subset(np.arange(adapt_block_size, session.n_trials))
        fit = _train_prior(algorithm, history, config)
        correct, lam = _evaluate(algorithm, mode, history, fit, block, test, config, lambda_grid, cv_folds, seed)
        cell = _cell(session.task_id, adapt_block_size, correct, test.n_trials, lam)
        del cell["n_per_class"]
        cell["adapt_trials"] = adapt_block_size
        cells.append(cell)
    summary = _describe([c["correct"] / c["n_test"] for c in cells]) if cells else None
    return {"protocol": "sessions", "algorithm": algorithm, "mode": mode, "seed": seed,
            "adapt_block_size": adapt_block_size, "lambda_grid": [float(v) for v in lambda_grid],
            "cv_folds": cv_folds, "config": config.to_dict(), "cells": cells, "skipped": skipped,
            "summary": summary}


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def format_table(report: dict) -> str:
    """Aligned plain-text summary of a report."""
    title = f"{report['protocol']}  algorithm={report['algorithm']}  mode={report['mode']}  seed={report['seed']}"
    cols = ["mean", "std", "min", "q1", "median", "q3", "max"]
    if report["protocol"] == "loso":
        header = ["n/class"] + cols
        rows = [[str(s["n_per_class"])] + [f"{s[c]:.4f}" for c in cols] for s in report["summary"]]
    else:
        header = ["session", "n_test", "lambda", "accuracy"]
        rows = [[c["task"], str(c["n_test"]), "-" if c["lambda"] is None else f"{c['lambda']:.3g}",
                 f"{c['accuracy']:.4f}"] for c in report["cells"]]
        if report["summary"]:
            rows.append(["(all)", "", "", f"median {report['summary']['median']:.4f} "
                                          f"min {report['summary']['min']:.4f}"])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = [title, "  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


def topography_rows(fit: FdFit, electrode_names, band_labels):
    e, f = fit.shape
    if len(electrode_names) != e or len(band_labels) != f:
        raise ValidationError(f"need {e} electrode names and {f} band labels, "
                              f"got {len(electrode_names)} and {len(band_labels)}")
    alpha, w, _, _ = canonicalize(fit.prior_alpha.mean, fit.prior_w.mean)
    rows = [("electrode", name, float(a)) for name, a in zip(electrode_names, alpha)]
    rows += [("band", label, float(abs(v))) for label, v in zip(band_labels, w)]
    return rows


def export_topography(fit: FdFit, electrode_names, band_labels, path, svg_path=None) -> Path:
    """Write canonical spatial weights and absolute spectral weights as CSV.

    One row per electrode then one row per band, columns ``kind,name,weight``.
    """
    rows = topography_rows(fit, electrode_names, band_labels)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "name", "weight"])
        for kind, name, value in rows:
            writer.writerow([kind, name, repr(value)])
    if svg_path is not None:
        Path(svg_path).write_text(_bars_svg(rows))
    return path


def _bars_svg(rows) -> str:
    bar, gap, height = 14, 4, 200
    peak = max((abs(v) for _, _, v in rows), default=1.0) or 1.0
    width = len(rows) * (bar + gap) + 40
    mid = height / 2 + 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + 80}">',
             f'<line x1="20" y1="{mid}" x2="{width - 10}" y2="{mid}" stroke="black"/>']
    for i, (kind, name, value) in enumerate(rows):
        x = 20 + i * (bar + gap)
        h = abs(value) / peak * (height / 2 - 10)
        y = mid - h if value >= 0 else mid
        color = "#3b6ea8" if kind == "electrode" else "#c0504d"
        parts.append(f'<rect x="{x}" y="{y:.2f}" width="{bar}" height="{h:.2f}" fill="{color}"><title>'
                     f'{name}: {value:.4g}</title></rect>')
        parts.append(f'<text x="{x + bar / 2}" y="{height + 30}" font-size="9" '
                     f'transform="rotate(90 {x + bar / 2} {height + 30})">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def load_fit(path):
    data = json.loads(Path(path).read_text())
    kind = data.get("kind")
    if kind == "mt":
        return MtlFit.from_dict(data)
    if kind == "mt_fd":
        return FdFit.from_dict(data)
    raise ValidationError(f"{path}: unknown fit kind {kind!r}")
