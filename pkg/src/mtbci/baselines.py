"""Ridge regression controls, flat and bilinear, on single or pooled tasks."""

from __future__ import annotations

import numpy as np

from .core import update_task_weights
from .data import GaussianPrior, TaskCollection, TaskDataset, TrainConfig
from .errors import ValidationError
from .fd import FdModel, fd_inner_loop


def ridge_train(X, y, lam: float) -> np.ndarray:
    """Minimiser of ``(1/lam)||Xw - y||^2 + ||w||^2 / 2``."""
    X = np.asarray(X, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("ridge_train: non-finite input")
    return update_task_weights(X, y, GaussianPrior.identity(X.shape[1]), lam)


def ridge_fd_train(task: TaskDataset, lam: float, config: TrainConfig | None = None) -> FdModel:
    config = config or TrainConfig(lam=lam)
    e, f = task.shape
    return fd_inner_loop(task, FdModel(np.ones(e), np.zeros(f)), GaussianPrior.identity(f),
                         GaussianPrior.identity(e), config, lam=lam)


def pool_tasks(collection: TaskCollection, extra: TaskDataset | None = None, task_id: str = "pooled") -> TaskDataset:
    """Concatenate trials in collection order, ``extra`` last."""
    parts = list(collection)
    if extra is not None:
        if extra.shape != collection.shape:
            raise ValidationError(f"dimension mismatch: extra task {extra.task_id!r} has {extra.shape}, "
                                  f"collection has {collection.shape}")
        parts.append(extra)
    return TaskDataset(task_id, np.concatenate([t.features for t in parts]),
                       np.concatenate([t.labels for t in parts]), collection.electrode_names)
