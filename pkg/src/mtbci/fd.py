"""Bilinear spatial x spectral rules ``alpha' X w`` with shared Gaussian priors."""

from __future__ import annotations

import json
from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np

from .core import (DATA_SCALE, _map, prior_penalty, relative_change, solve_prior_regression,
                   update_prior_covariance, update_prior_mean)
from .data import GaussianPrior, TaskCollection, TaskDataset, TrainConfig
from .errors import DegenerateScatterError, SolverError


@dataclass
class FdModel:
    alpha: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        self.w = np.asarray(self.w, dtype=float).reshape(-1)

    @property
    def n_params(self) -> int:
        return self.alpha.size + self.w.size

    def scores(self, features) -> np.ndarray:
        return fd_scores(features, self)

    def canonical(self):
        return canonicalize(self.alpha, self.w)


def fd_predict_raw(X, model: FdModel) -> float:
    return float(model.alpha @ np.asarray(X, dtype=float) @ model.w)


def fd_scores(features, model: FdModel) -> np.ndarray:
    """Raw scores for a stack of ``(n, E, F)`` trials."""
    return collapse_spatial(features, model.alpha) @ model.w


def collapse_spatial(trials, alpha) -> np.ndarray:
    """Rows ``alpha' X_i``; shape (n, F)."""
    return np.einsum("e,nef->nf", np.asarray(alpha, dtype=float), np.asarray(trials, dtype=float))


def collapse_spectral(trials, w) -> np.ndarray:
    """Columns ``X_i w``; shape (E, n)."""
    return np.einsum("nef,f->en", np.asarray(trials, dtype=float), np.asarray(w, dtype=float))


def canonicalize(alpha, w):
    """Scale alpha to unit norm (w absorbs the factor) and make its largest-magnitude entry positive.

    Returns ``(alpha, w, norm, sign)``. The product ``alpha w'`` is unchanged.
    """
    alpha = np.asarray(alpha, dtype=float)
    w = np.asarray(w, dtype=float)
    norm = float(np.linalg.norm(alpha))
    if norm == 0.0:
        return alpha.copy(), w.copy(), 0.0, 1
    sign = 1 if alpha[int(np.argmax(np.abs(alpha)))] >= 0 else -1
    return sign * alpha / norm, sign * norm * w, norm, sign


def decomposed_loss_task(features, y, model: FdModel, prior_w: GaussianPrior, prior_alpha: GaussianPrior,
                         lam: float) -> float:
    resid = fd_scores(features, model) - y
    return (float(resid @ resid) / lam + prior_penalty(model.w, prior_w)
            + prior_penalty(model.alpha, prior_alpha))


def decomposed_loss(collection: TaskCollection, models, prior_w, prior_alpha, lam: float) -> float:
    return sum(decomposed_loss_task(t.features, t.labels.astype(float), m, prior_w, prior_alpha, lam)
               for t, m in zip(collection, models))


def _check(model: FdModel):
    if not (np.all(np.isfinite(model.alpha)) and np.all(np.isfinite(model.w))):
        raise SolverError("non-finite values in bilinear model")


def _inner(features, y, model0: FdModel, prior_w, prior_alpha, lam, tol, max_iter, record=False):
    alpha, w = model0.alpha.copy(), model0.w.copy()
    losses = []
    if record:
        losses.append(decomposed_loss_task(features, y, FdModel(alpha, w), prior_w, prior_alpha, lam))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Xt = collapse_spatial(features, alpha)
        w_new = solve_prior_regression(Xt.T @ Xt, Xt.T @ y, prior_w, lam)
        if record:
            losses.append(decomposed_loss_task(features, y, FdModel(alpha, w_new), prior_w, prior_alpha, lam))
        Xh = collapse_spectral(features, w_new)
        alpha_new = solve_prior_regression(Xh @ Xh.T, Xh @ y, prior_alpha, lam)
        if record:
            losses.append(decomposed_loss_task(features, y, FdModel(alpha_new, w_new), prior_w, prior_alpha, lam))
        change = max(relative_change(w_new, w), relative_change(alpha_new, alpha))
        alpha, w = alpha_new, w_new
        if change < tol:
            converged = True
            break
    model = FdModel(alpha, w)
    _check(model)
    return model, losses, it, converged


def fd_inner_loop(task: TaskDataset, model0: FdModel, prior_w: GaussianPrior, prior_alpha: GaussianPrior,
                  config: TrainConfig, lam: float | None = None, return_trace: bool = False):
    """Alternate exact w- and alpha-updates for one task with the priors fixed.

    ``collapse_spatial``/``collapse_spectral`` are recomputed from the latest
    weights on every alternation. Stops when the relative change of both
    vectors drops below ``config.inner_tol`` or after ``config.max_inner_iter``
    alternations.

    With ``return_trace=True`` also returns the decomposed loss at the start
    and after every half-step.
    """
    lam = config.lam if lam is None else lam
    model, losses, _, _ = _inner(task.features, task.labels.astype(float), model0, prior_w, prior_alpha,
                                 lam, config.inner_tol, config.max_inner_iter, record=return_trace)
    if return_trace:
        return model, losses
    return model


@dataclass
class FdFit:
    prior_w: GaussianPrior
    prior_alpha: GaussianPrior
    task_models: list
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    task_ids: list = field(default_factory=list)
    config: TrainConfig | None = None
    degenerate_updates: dict = field(default_factory=lambda: {"w": 0, "alpha": 0})
    inner_traces: list = field(default_factory=list)
    sweep_checks: list = field(default_factory=list)

    kind = "mt_fd"

    @property
    def shape(self):
        return self.prior_alpha.dim, self.prior_w.dim

    def mean_model(self) -> FdModel:
        return FdModel(self.prior_alpha.mean, self.prior_w.mean)

    def to_dict(self) -> dict:
        alpha_c, w_c, norm, sign = canonicalize(self.prior_alpha.mean, self.prior_w.mean)
        return {
            "kind": self.kind,
            "shape": list(self.shape),
            "prior_w": {"mean": self.prior_w.mean.tolist(),
                        "covariance": self.prior_w.covariance.reshape(-1).tolist()},
            "prior_alpha": {"mean": self.prior_alpha.mean.tolist(),
                            "covariance": self.prior_alpha.covariance.reshape(-1).tolist()},
            "task_models": {tid: {"alpha": m.alpha.tolist(), "w": m.w.tolist()}
                            for tid, m in zip(self.task_ids, self.task_models)},
            "canonical": {"alpha": alpha_c.tolist(), "w": w_c.tolist(), "norm_factor": norm, "sign": sign},
            "objective_trace": list(self.objective_trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "degenerate_updates": dict(self.degenerate_updates),
            "config": self.config.to_dict() if self.config else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FdFit":
        e, f = d["shape"]

        def prior(p, k):
            return GaussianPrior(np.array(p["mean"]), np.array(p["covariance"]).reshape(k, k))

        ids = list(d["task_models"])
        return cls(prior_w=prior(d["prior_w"], f), prior_alpha=prior(d["prior_alpha"], e),
                   task_models=[FdModel(d["task_models"][k]["alpha"], d["task_models"][k]["w"]) for k in ids],
                   objective_trace=list(d["objective_trace"]), iterations=int(d["iterations"]),
                   converged=bool(d["converged"]), task_ids=ids,
                   config=TrainConfig.from_dict(d["config"]) if d.get("config") else None,
                   degenerate_updates=dict(d.get("degenerate_updates", {"w": 0, "alpha": 0})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def pooled_dataset(collection: TaskCollection) -> TaskDataset:
    feats = np.concatenate([t.features for t in collection])
    labels = np.concatenate([t.labels for t in collection])
    return TaskDataset("pooled", feats, labels, collection.electrode_names)


def fd_ridge_init(collection: TaskCollection, lam: float, config: TrainConfig | None = None) -> np.ndarray:
    """Spatial weights from a bilinear ridge fit on all tasks pooled into one."""
    config = config or TrainConfig(lam=lam)
    e, f = collection.shape
    pooled = pooled_dataset(collection)
    model = fd_inner_loop(pooled, FdModel(np.ones(e), np.zeros(f)), GaussianPrior.identity(f),
                          GaussianPrior.identity(e), config, lam=lam)
    return model.alpha


def _update_prior(vectors, prior: GaussianPrior, epsilon: float):
    mean = update_prior_mean(vectors)
    try:
        cov = update_prior_covariance(vectors, mean, epsilon)
        degenerate = False
    except DegenerateScatterError:
        cov = prior.covariance
        degenerate = True
    return GaussianPrior(mean, cov), degenerate


def train_multitask_fd(collection: TaskCollection, config: TrainConfig, executor: Executor | None = None,
                       record_inner: bool = False) -> FdFit:
    """Multitask training of bilinear rules.

    ``config.init_mode`` selects the spatial start: ``"uninformative"`` sets
    every alpha to ones, ``"ridge_init"`` uses :func:`fd_ridge_init` on the
    pooled data. Each outer iteration runs the inner loop for every task
    (warm-started from the previous iteration), then updates both prior
    means and trace-normalised covariances. ``objective_trace`` holds the
    decomposed loss after the inner loops and mean updates.
    """
    e, f = collection.shape
    lam = config.lam
    prior_w = GaussianPrior.identity(f)
    prior_alpha = GaussianPrior.identity(e)
    if config.init_mode == "ridge_init":
        alpha0 = fd_ridge_init(collection, lam, config)
    else:
        alpha0 = np.ones(e)
    models = [FdModel(alpha0.copy(), np.zeros(f)) for _ in collection]
    designs = [(t.features, t.labels.astype(float)) for t in collection]
    fit = FdFit(prior_w=prior_w, prior_alpha=prior_alpha, task_models=models,
                task_ids=collection.task_ids, config=config)

    def loss(ms, pw, pa):
        return sum(decomposed_loss_task(X, y, m, pw, pa, lam) for (X, y), m in zip(designs, ms))

    for it in range(1, config.max_outer_iter + 1):
        before = loss(models, prior_w, prior_alpha)

        def run(args):
            (X, y), m = args
            return _inner(X, y, m, prior_w, prior_alpha, lam, config.inner_tol, config.max_inner_iter,
                          record=record_inner)

        results = _map(executor, run, list(zip(designs, models)))
        new_models = [r[0] for r in results]
        if record_inner:
            fit.inner_traces.append([r[1] for r in results])
        A = np.array([m.alpha for m in new_models])
        W = np.array([m.w for m in new_models])
        mu_w, mu_a = update_prior_mean(W), update_prior_mean(A)
        after = loss(new_models, GaussianPrior(mu_w, prior_w.covariance),
                     GaussianPrior(mu_a, prior_alpha.covariance))
        fit.sweep_checks.append((before, after))
        fit.objective_trace.append(after)
        new_pw, deg_w = _update_prior(W, prior_w, config.epsilon)
        new_pa, deg_a = _update_prior(A, prior_alpha, config.epsilon)
        fit.degenerate_updates["w"] += deg_w
        fit.degenerate_updates["alpha"] += deg_a
        change = max(
            relative_change(W, [m.w for m in models]), relative_change(A, [m.alpha for m in models]),
            relative_change(new_pw.mean, prior_w.mean), relative_change(new_pw.covariance, prior_w.covariance),
            relative_change(new_pa.mean, prior_alpha.mean),
            relative_change(new_pa.covariance, prior_alpha.covariance),
        )
        models, prior_w, prior_alpha = new_models, new_pw, new_pa
        fit.iterations = it
        if change < config.outer_tol:
            fit.converged = True
            break

    fit.prior_w, fit.prior_alpha, fit.task_models = prior_w, prior_alpha, models
    return fit
