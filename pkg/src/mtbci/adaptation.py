"""Using learned priors on a new task: zero-training prediction, adaptation, lambda selection."""

from __future__ import annotations

from concurrent.futures import Executor

import numpy as np

from .core import MtlFit, _map, update_task_weights
from .data import GaussianPrior, TaskCollection, TaskDataset, Trial, TrainConfig, flatten_trials
from .errors import ValidationError
from .fd import FdFit, FdModel, fd_inner_loop, fd_scores, pooled_dataset

DEFAULT_LAMBDA_GRID = tuple(float(v) for v in np.logspace(-4, 2, 13))
DEFAULT_FOLDS = 5


def sign_labels(scores) -> np.ndarray:
    """Sign with ties mapped to +1."""
    return np.where(np.asarray(scores) >= 0, 1, -1)


def accuracy(pred, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValidationError("accuracy of an empty test set is undefined")
    return float(np.count_nonzero(np.asarray(pred) == labels)) / labels.size


def score_trials(features, model) -> np.ndarray:
    """Raw scores of ``(n, E, F)`` trials under a flat weight vector, FdModel, or fit's prior mean."""
    features = np.asarray(features, dtype=float)
    if isinstance(model, MtlFit):
        model = model.prior.mean
    elif isinstance(model, FdFit):
        model = model.mean_model()
    if isinstance(model, FdModel):
        return fd_scores(features, model)
    n, e, f = features.shape
    return features.reshape(n, e * f) @ np.asarray(model, dtype=float)


def predict_zero_training(trial, fit) -> tuple[int, float]:
    """Classify one trial with the prior mean(s) alone; returns ``(label, raw score)``."""
    features = trial.features if isinstance(trial, Trial) else trial
    score = float(score_trials(np.asarray(features, dtype=float)[None], fit)[0])
    return (1 if score >= 0 else -1), score


def adapt_flat(train: TaskDataset, prior: GaussianPrior, lam: float) -> np.ndarray:
    X, y = flatten_trials(train)
    return update_task_weights(X, y, prior, lam)


def adapt_fd(train: TaskDataset, prior_w: GaussianPrior, prior_alpha: GaussianPrior, lam: float,
             config: TrainConfig | None = None) -> FdModel:
    """Inner loop with the learned priors, started at the prior means."""
    config = config or TrainConfig(lam=lam)
    return fd_inner_loop(train, FdModel(prior_alpha.mean, prior_w.mean), prior_w, prior_alpha, config, lam=lam)


def stratified_folds(labels, k: int, seed: int) -> list[np.ndarray]:
    """Assign each class's shuffled indices round-robin to ``k`` folds."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for cls in (-1, 1):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        for j, i in enumerate(idx):
            folds[(offset + j) % k].append(i)
        offset += idx.size
    return [np.sort(np.array(f, dtype=int)) for f in folds]


def _fit_and_score(train: TaskDataset, test: TaskDataset, lam: float, mode: str, priors, config):
    e, f = train.shape
    if mode == "flat":
        prior = priors if priors is not None else GaussianPrior.identity(e * f)
        w = adapt_flat(train, prior, lam)
        scores = score_trials(test.features, w)
    elif mode == "fd":
        if priors is None:
            prior_w, prior_alpha = GaussianPrior.identity(f), GaussianPrior.identity(e)
            start = FdModel(np.ones(e), np.zeros(f))
        else:
            prior_w, prior_alpha = priors
            start = FdModel(prior_alpha.mean, prior_w.mean)
        model = fd_inner_loop(train, start, prior_w, prior_alpha, config, lam=lam)
        scores = fd_scores(test.features, model)
    else:
        raise ValidationError(f"mode must be 'flat' or 'fd', got {mode!r}")
    return accuracy(sign_labels(scores), test.labels)


def cross_validate_lambda(train, grid=DEFAULT_LAMBDA_GRID, k: int = DEFAULT_FOLDS, mode: str = "flat",
                          priors=None, seed: int = 0, config: TrainConfig | None = None,
                          executor: Executor | None = None, return_scores: bool = False):
    """Pick the grid value with the highest mean stratified k-fold accuracy.

    Parameters
    ----------
    train : TaskDataset or TaskCollection
        A collection is pooled first.
    grid : sequence of float
    k : int
        Number of folds; ``k == n`` gives leave-one-out.
    mode : {"flat", "fd"}
    priors : GaussianPrior, or (prior_w, prior_alpha) for ``mode="fd"``; None means identity priors.

    Ties go to the larger lambda.
    """
    if isinstance(train, TaskCollection):
        train = pooled_dataset(train)
    grid = [float(v) for v in grid]
    if not grid or any(not v > 0 for v in grid):
        raise ValidationError("lambda grid must be non-empty and positive")
    if len(grid) == 1:
        return (grid[0], [None]) if return_scores else grid[0]
    n = train.n_trials
    if k < 2 or k > n:
        raise ValidationError(f"cannot make {k} folds from {n} trials")
    folds = stratified_folds(train.labels, k, seed)
    splits = []
    for fold in folds:
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        tr = train.subset(np.flatnonzero(mask))
        if fold.size == 0 or not tr.has_both_classes():
            raise ValidationError(f"infeasible fold: training part lacks a class or test part is empty")
        splits.append((tr, train.subset(fold)))
    config = config or TrainConfig()

    def evaluate(lam):
        return float(np.mean([_fit_and_score(tr, te, lam, mode, priors, config) for tr, te in splits]))

    scores = _map(executor, evaluate, grid)
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best] or (s == scores[best] and grid[i] > grid[best]):
            best = i
    return (grid[best], scores) if return_scores else grid[best]
