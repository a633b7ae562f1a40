"""Synthetic multitask collections with planted structure, and a reference minimiser.

Task ``s`` draws from its own generator seeded with ``(seed, s)``, so tasks
can be generated independently and in any order.
"""

from __future__ import annotations

import numpy as np

from .data import TaskCollection, TaskDataset
from .errors import ValidationError

DEFAULT_SCENARIO = dict(d=20, S=10, n_per_task=100, noise_sigma=0.5)


def _gaussian_factor(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValidationError("covariance must be square")
    if not np.all(np.isfinite(cov)) or np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10 * max(np.max(np.abs(cov)), 1e-300):
        raise ValidationError("covariance must be finite and symmetric")
    vals, vecs = np.linalg.eigh(cov)
    if vals.size and vals[0] < -1e-10 * max(vals[-1], 1.0):
        raise ValidationError("covariance is not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _labels(raw) -> np.ndarray:
    return np.where(raw >= 0, 1, -1)


def _task_rng(seed: int, s: int) -> np.random.Generator:
    return np.random.default_rng((int(seed), int(s)))


def generate_flat_collection(mu_star, sigma_star, S: int, n_per_task: int, noise_sigma: float, seed: int,
                             shape: tuple[int, int] | None = None):
    """Tasks with ``w_s ~ N(mu_star, sigma_star)``, standard-normal features and sign labels.

    Returns ``(collection, true_weights)`` where ``true_weights`` is an
    ``(S, d)`` array. ``shape`` lays the d features out as ``(E, F)``
    (default ``(1, d)``).
    """
    mu_star = np.asarray(mu_star, dtype=float).reshape(-1)
    d = mu_star.size
    factor = _gaussian_factor(sigma_star)
    if factor.shape[0] != d:
        raise ValidationError("sigma_star does not match mu_star")
    if noise_sigma < 0:
        raise ValidationError("noise_sigma must be non-negative")
    shape = shape or (1, d)
    if shape[0] * shape[1] != d:
        raise ValidationError(f"shape {shape} does not hold {d} features")
    tasks, truths = [], []
    for s in range(S):
        rng = _task_rng(seed, s)
        w = mu_star + factor @ rng.standard_normal(d)
        X = rng.standard_normal((n_per_task, d))
        raw = X @ w + noise_sigma * rng.standard_normal(n_per_task)
        tasks.append(TaskDataset(f"task{s:03d}", X.reshape(n_per_task, *shape), _labels(raw)))
        truths.append(w)
    return TaskCollection(tuple(tasks)), np.array(truths)


def generate_fd_collection(alpha_star, w_star, spreads, S: int, n_per_task: int, noise_sigma: float, seed: int):
    """Tasks with bilinear rules ``alpha_s' X w_s`` scattered around ``(alpha_star, w_star)``.

    ``spreads`` is ``(alpha_sd, w_sd)``; each entry is a scalar or a per-entry
    vector of standard deviations. Returns ``(collection, truths)`` with
    ``truths`` a list of ``(alpha_s, w_s)``.
    """
    alpha_star = np.asarray(alpha_star, dtype=float).reshape(-1)
    w_star = np.asarray(w_star, dtype=float).reshape(-1)
    e, f = alpha_star.size, w_star.size
    alpha_sd = np.broadcast_to(np.asarray(spreads[0], dtype=float), (e,))
    w_sd = np.broadcast_to(np.asarray(spreads[1], dtype=float), (f,))
    if np.any(alpha_sd < 0) or np.any(w_sd < 0) or noise_sigma < 0:
        raise ValidationError("spreads and noise must be non-negative")
    a_factor = _gaussian_factor(np.diag(alpha_sd ** 2))
    w_factor = _gaussian_factor(np.diag(w_sd ** 2))
    tasks, truths = [], []
    for s in range(S):
        rng = _task_rng(seed, s)
        w = w_star + w_factor @ rng.standard_normal(f)
        X = rng.standard_normal((n_per_task, e, f))
        noise = noise_sigma * rng.standard_normal(n_per_task)
        alpha = alpha_star + a_factor @ rng.standard_normal(e)
        raw = np.einsum("e,nef,f->n", alpha, X, w) + noise
        tasks.append(TaskDataset(f"task{s:03d}", X, _labels(raw)))
        truths.append((alpha, w))
    return TaskCollection(tuple(tasks)), truths


def default_flat_scenario(seed: int = 1, d: int = 20, S: int = 10, n_per_task: int = 100,
                          noise_sigma: float = 0.5, varying=(0, 1), spread: float = 1.0):
    """Planted flat scenario: random unit-norm mean, covariance mass on two coordinates."""
    rng = np.random.default_rng((int(seed), 10_000))
    mu = rng.standard_normal(d)
    mu /= np.linalg.norm(mu)
    cov = np.zeros((d, d))
    cov[list(varying), list(varying)] = spread ** 2
    collection, truths = generate_flat_collection(mu, cov, S, n_per_task, noise_sigma, seed)
    return collection, truths, mu, cov


def default_fd_scenario(seed: int = 1, E: int = 5, F: int = 4, S: int = 10, n_per_task: int = 100,
                        noise_sigma: float = 0.5, spreads=(0.3, 0.3)):
    """Planted rank-1 scenario with unit-norm spatial and spectral patterns."""
    rng = np.random.default_rng((int(seed), 20_000))
    alpha = rng.standard_normal(E)
    alpha /= np.linalg.norm(alpha)
    w = rng.standard_normal(F)
    w /= np.linalg.norm(w)
    collection, truths = generate_fd_collection(alpha, w, spreads, S, n_per_task, noise_sigma, seed)
    return collection, truths, alpha, w


def numerical_gradient(objective, x, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (objective(xp) - objective(xm)) / (2 * step)
    return g


class OracleFailure(RuntimeError):
    pass


def brute_force_minimize(objective, init, tol: float = 1e-10, grad=None, max_iter: int = 200_000):
    """Gradient descent with Barzilai-Borwein steps and Armijo backtracking.

    Deliberately independent of the closed-form solvers; meant as a test
    oracle. ``grad`` defaults to central finite differences, which limits
    the attainable ``tol`` to roughly the square root of machine precision
    times the objective scale.

    Raises
    ------
    OracleFailure
        If the gradient norm does not reach ``tol`` within ``max_iter`` steps.
    """
    grad = grad or (lambda v: numerical_gradient(objective, v))
    x = np.array(init, dtype=float)
    fx = objective(x)
    if not np.isfinite(fx):
        raise OracleFailure("objective is not finite at init")
    g = grad(x)
    step = 1.0 / max(np.linalg.norm(g), 1.0)
    for _ in range(max_iter):
        gnorm = np.linalg.norm(g)
        if gnorm <= tol:
            return x
        t = step
        while True:
            x_new = x - t * g
            f_new = objective(x_new)
            # the allowance lets the search continue once decreases drop below rounding noise in f
            if f_new <= fx - 1e-4 * t * gnorm ** 2 + 1e-14 * abs(fx) or t < 1e-300:
                break
            t *= 0.5
        g_new = grad(x_new)
        s, r = x_new - x, g_new - g
        sr = float(s @ r)
        step = float(s @ s) / sr if sr > 0 else 2 * t
        if np.array_equal(x_new, x):
            # line search stalled at machine precision
            if np.linalg.norm(g_new) <= tol * 10:
                return x_new
            raise OracleFailure(f"stalled with gradient norm {gnorm:.3g}")
        x, fx, g = x_new, f_new, g_new
    raise OracleFailure(f"no convergence in {max_iter} iterations (gradient norm {np.linalg.norm(g):.3g})")
