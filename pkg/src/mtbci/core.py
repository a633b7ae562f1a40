"""Joint training of per-task linear rules and a shared Gaussian prior.

The objective for one task is

    (1/lam) * ||X w - y||^2 + 1/2 (w - mu)' Sigma^-1 (w - mu) + 1/2 log det Sigma

and the joint objective sums it over tasks. Weight updates are solved in the
covariance form ``(c Sigma X'X + I) w = c Sigma X'y + mu`` so Sigma is never
inverted.
"""

from __future__ import annotations

import json
from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .data import GaussianPrior, TaskCollection, TrainConfig, flatten_trials
from .errors import DegenerateScatterError, SolverError, ValidationError

# The data term carries 1/lam while the prior term carries 1/2, so the
# stationary point of the objective scales the data moments by 2/lam.
DATA_SCALE = 2.0

# Scatter traces below this fraction of ||W||_F^2 are rounding noise.
_DEGENERATE_RTOL = 1e-24


def _cholesky(cov):
    try:
        return linalg.cho_factor(cov, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"covariance is not positive definite: {exc}") from exc


def prior_penalty(w, prior: GaussianPrior, include_logdet: bool = True) -> float:
    """Negative log Gaussian prior ``1/2 r' Sigma^-1 r + 1/2 log det Sigma`` (constant dropped)."""
    c = _cholesky(prior.covariance)
    r = np.asarray(w, dtype=float) - prior.mean
    quad = float(r @ linalg.cho_solve(c, r))
    if not include_logdet:
        return 0.5 * quad
    logdet = 2.0 * float(np.sum(np.log(np.diag(c[0]))))
    return 0.5 * quad + 0.5 * logdet


def penalized_loss_single(w, X, y, prior: GaussianPrior, lam: float) -> float:
    w = np.asarray(w, dtype=float)
    resid = np.asarray(X, dtype=float) @ w - np.asarray(y, dtype=float)
    return float(resid @ resid) / lam + prior_penalty(w, prior)


def penalized_loss_grad(w, X, y, prior: GaussianPrior, lam: float) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    resid = X @ w - y
    c = _cholesky(prior.covariance)
    return DATA_SCALE / lam * (X.T @ resid) + linalg.cho_solve(c, w - prior.mean)


def solve_prior_regression(gram, moment, prior: GaussianPrior, lam: float, form: str = "covariance"):
    """Minimise ``(1/lam)(w'Gw - 2 w'b) + prior penalty`` given ``G = X'X`` and ``b = X'y``.

    ``form="covariance"`` solves ``(c Sigma G + I) w = c Sigma b + mu`` with
    ``c = 2/lam``; ``form="precision"`` solves the algebraically equal
    ``(c G + Sigma^-1) w = c b + Sigma^-1 mu`` and is kept for cross-checks.
    """
    scale = DATA_SCALE / lam
    gram = np.asarray(gram, dtype=float)
    moment = np.asarray(moment, dtype=float)
    sigma = prior.covariance
    if form == "covariance":
        A = scale * (sigma @ gram)
        A[np.diag_indices_from(A)] += 1.0
        rhs = scale * (sigma @ moment) + prior.mean
    elif form == "precision":
        precision = linalg.cho_solve(_cholesky(sigma), np.eye(prior.dim))
        A = scale * gram + precision
        rhs = scale * moment + precision @ prior.mean
    else:
        raise ValueError(f"unknown form {form!r}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(rhs))):
        raise SolverError("non-finite values in weight update system")
    try:
        w = linalg.solve(A, rhs, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SolverError(f"weight update system is singular: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise SolverError("weight update produced non-finite values")
    return w


def update_task_weights(X, y, prior: GaussianPrior, lam: float, form: str = "covariance") -> np.ndarray:
    """Closed-form minimiser of :func:`penalized_loss_single` for a fixed prior.

    Parameters
    ----------
    X : ndarray, shape (n, d)
        Design matrix; ``n`` may be zero, in which case the prior mean is returned.
    y : ndarray, shape (n,)
    prior : GaussianPrior
    lam : float
        Noise / trade-off parameter.

    Returns
    -------
    w : ndarray, shape (d,)
    """
    X = np.asarray(X, dtype=float).reshape(-1, prior.dim)
    y = np.asarray(y, dtype=float).reshape(-1)
    return solve_prior_regression(X.T @ X, X.T @ y, prior, lam, form=form)


def update_prior_mean(task_weights) -> np.ndarray:
    W = np.asarray(task_weights, dtype=float)
    if W.ndim != 2 or W.shape[0] < 1:
        raise ValidationError("task_weights must be a non-empty (S, d) matrix")
    return W.sum(axis=0) / W.shape[0]


def update_prior_covariance(task_weights, mean, epsilon: float) -> np.ndarray:
    """Trace-normalised scatter of the task weights plus ``epsilon * I``.

    Raises
    ------
    DegenerateScatterError
        If the scatter trace vanishes (one task, or identical weights).
    """
    W = np.asarray(task_weights, dtype=float)
    R = W - np.asarray(mean, dtype=float)
    scatter = R.T @ R
    scatter = 0.5 * (scatter + scatter.T)
    trace = float(np.trace(scatter))
    if not trace > _DEGENERATE_RTOL * max(float(np.sum(W * W)), 1e-300):
        raise DegenerateScatterError(f"scatter trace {trace:.3g} is degenerate")
    cov = scatter / trace
    cov[np.diag_indices_from(cov)] += epsilon
    return cov


def joint_objective(designs, task_weights, prior: GaussianPrior, lam: float) -> float:
    """Sum of per-task penalised losses (log-determinant included once per task)."""
    c = _cholesky(prior.covariance)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c[0]))))
    total = 0.0
    for (X, y), w in zip(designs, task_weights):
        resid = X @ w - y
        r = w - prior.mean
        total += float(resid @ resid) / lam + 0.5 * float(r @ linalg.cho_solve(c, r)) + 0.5 * logdet
    return total


def relative_change(new, old) -> float:
    new = np.asarray(new, dtype=float)
    old = np.asarray(old, dtype=float)
    diff = float(np.linalg.norm(new - old))
    if diff == 0.0:
        return 0.0
    return diff / max(float(np.linalg.norm(old)), 1e-12)


@dataclass
class MtlFit:
    prior: GaussianPrior
    task_weights: np.ndarray
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    task_ids: list = field(default_factory=list)
    shape: tuple | None = None
    config: TrainConfig | None = None
    degenerate_updates: int = 0
    # (objective before the w-sweep, objective after w-sweep and mean update)
    sweep_checks: list = field(default_factory=list)

    kind = "mt"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mu": self.prior.mean.tolist(),
            "sigma": self.prior.covariance.reshape(-1).tolist(),
            "dim": self.prior.dim,
            "shape": list(self.shape) if self.shape else None,
            "task_weights": {tid: w.tolist() for tid, w in zip(self.task_ids, self.task_weights)},
            "objective_trace": list(self.objective_trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "degenerate_updates": self.degenerate_updates,
            "config": self.config.to_dict() if self.config else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MtlFit":
        dim = int(d["dim"])
        prior = GaussianPrior(np.array(d["mu"]), np.array(d["sigma"]).reshape(dim, dim))
        ids = list(d["task_weights"])
        W = np.array([d["task_weights"][k] for k in ids]).reshape(len(ids), dim)
        return cls(prior=prior, task_weights=W, objective_trace=list(d["objective_trace"]),
                   iterations=int(d["iterations"]), converged=bool(d["converged"]), task_ids=ids,
                   shape=tuple(d["shape"]) if d.get("shape") else None,
                   config=TrainConfig.from_dict(d["config"]) if d.get("config") else None,
                   degenerate_updates=int(d.get("degenerate_updates", 0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _map(executor: Executor | None, fn, items):
    if executor is None:
        return [fn(item) for item in items]
    return list(executor.map(fn, items))


def train_multitask(collection: TaskCollection, config: TrainConfig, executor: Executor | None = None) -> MtlFit:
    """Alternate closed-form task-weight updates with prior mean/covariance updates.

    The prior starts at (0, I). Each outer iteration updates every task's
    weights, then the mean, then the trace-normalised covariance. When the
    scatter is degenerate the covariance keeps its previous value.
    ``objective_trace`` holds the joint objective after each weight/mean
    update pair. Per-task solves go through ``executor.map`` when given;
    results are reduced in task order, so the fit does not depend on it.
    """
    designs = [flatten_trials(task) for task in collection]
    grams = [(X.T @ X, X.T @ y) for X, y in designs]
    d = collection.dim
    prior = GaussianPrior.identity(d)
    W = np.zeros((len(designs), d))
    fit = MtlFit(prior=prior, task_weights=W, task_ids=collection.task_ids,
                 shape=collection.shape, config=config)
    lam = config.lam

    for it in range(1, config.max_outer_iter + 1):
        before = joint_objective(designs, W, prior, lam)
        W_new = np.array(_map(executor, lambda gb: solve_prior_regression(gb[0], gb[1], prior, lam), grams))
        mu_new = update_prior_mean(W_new)
        after_prior = GaussianPrior(mu_new, prior.covariance)
        after = joint_objective(designs, W_new, after_prior, lam)
        fit.sweep_checks.append((before, after))
        fit.objective_trace.append(after)
        try:
            sigma_new = update_prior_covariance(W_new, mu_new, config.epsilon)
        except DegenerateScatterError:
            sigma_new = prior.covariance
            fit.degenerate_updates += 1
        change = max(relative_change(W_new, W), relative_change(mu_new, prior.mean),
                     relative_change(sigma_new, prior.covariance))
        W, prior = W_new, GaussianPrior(mu_new, sigma_new)
        fit.iterations = it
        if change < config.outer_tol:
            fit.converged = True
            break

    fit.prior = prior
    fit.task_weights = W
    return fit
