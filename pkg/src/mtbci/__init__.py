"""Multitask linear decoders with shared Gaussian priors over task rules."""

from .adaptation import adapt_fd, adapt_flat, cross_validate_lambda, predict_zero_training
from .baselines import pool_tasks, ridge_fd_train, ridge_train
from .core import (MtlFit, penalized_loss_single, train_multitask, update_prior_covariance, update_prior_mean,
                   update_task_weights)
from .data import (GaussianPrior, TaskCollection, TaskDataset, TrainConfig, Trial, flatten_trials,
                   load_collection, save_collection, split_task, unflatten)
from .errors import DegenerateScatterError, MtbciError, SolverError, ValidationError
from .fd import (FdFit, FdModel, collapse_spatial, collapse_spectral, fd_inner_loop, fd_predict_raw,
                 fd_ridge_init, train_multitask_fd)

__version__ = "0.1.0"
