import json

import numpy as np
import pytest

from mtbci import (FdFit, FdModel, GaussianPrior, TaskCollection, TaskDataset, TrainConfig, fd_inner_loop,
                   train_multitask_fd)
from mtbci.fd import (canonicalize, collapse_spatial, collapse_spectral, decomposed_loss_task, fd_predict_raw,
                      fd_ridge_init, fd_scores)
from mtbci.synth import brute_force_minimize, default_fd_scenario

from conftest import make_task, random_prior


def _loop_score(X, alpha, w):
    total = 0.0
    for e in range(X.shape[0]):
        for f in range(X.shape[1]):
            total += alpha[e] * X[e, f] * w[f]
    return total


class TestPrediction:
    def test_hand_case(self):
        X = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert fd_predict_raw(X, FdModel([1, -1], [0.5, 2])) == pytest.approx(4.5 - 9.5)

    def test_matches_loops(self, rng):
        trials = rng.standard_normal((6, 4, 3))
        model = FdModel(rng.standard_normal(4), rng.standard_normal(3))
        expected = [_loop_score(X, model.alpha, model.w) for X in trials]
        np.testing.assert_allclose(fd_scores(trials, model), expected, rtol=1e-13)

    def test_collapses(self, rng):
        trials = rng.standard_normal((5, 3, 4))
        alpha, w = rng.standard_normal(3), rng.standard_normal(4)
        xt = collapse_spatial(trials, alpha)
        xh = collapse_spectral(trials, w)
        assert xt.shape == (5, 4)
        assert xh.shape == (3, 5)
        for i in range(5):
            np.testing.assert_allclose(xt[i], [sum(alpha[e] * trials[i, e, f] for e in range(3)) for f in range(4)],
                                       rtol=1e-13)
            np.testing.assert_allclose(xh[:, i], [sum(trials[i, e, f] * w[f] for f in range(4)) for e in range(3)],
                                       rtol=1e-13)
        np.testing.assert_allclose(xt @ w, alpha @ xh, rtol=1e-12)

    def test_parameter_count(self):
        assert FdModel(np.ones(30), np.ones(12)).n_params == 42

    def test_single_electrode_is_flat(self, rng):
        trials = rng.standard_normal((7, 1, 5))
        model = FdModel([2.5], rng.standard_normal(5))
        np.testing.assert_allclose(fd_scores(trials, model), trials[:, 0, :] @ (2.5 * model.w), rtol=1e-13)


class TestCanonical:
    def test_product_preserved(self, rng):
        alpha, w = rng.standard_normal(4), rng.standard_normal(3)
        a, b, norm, sign = canonicalize(alpha, w)
        np.testing.assert_allclose(np.outer(a, b), np.outer(alpha, w), rtol=1e-12)
        assert np.linalg.norm(a) == pytest.approx(1.0)
        assert a[np.argmax(np.abs(a))] > 0
        assert norm == pytest.approx(np.linalg.norm(alpha))

    def test_scale_symmetry_of_scores(self, rng):
        trials = rng.standard_normal((4, 3, 2))
        alpha, w = rng.standard_normal(3), rng.standard_normal(2)
        for c in (-3.0, 0.25, 10.0):
            np.testing.assert_allclose(fd_scores(trials, FdModel(c * alpha, w / c)),
                                       fd_scores(trials, FdModel(alpha, w)), rtol=1e-12)


def _joint_loss(task, prior_w, prior_alpha, lam, e):
    y = task.labels.astype(float)
    return lambda v: decomposed_loss_task(task.features, y, FdModel(v[:e], v[e:]), prior_w, prior_alpha, lam)


def _joint_grad(task, prior_w, prior_alpha, lam, e):
    y = task.labels.astype(float)
    pw, pa = np.linalg.inv(prior_w.covariance), np.linalg.inv(prior_alpha.covariance)

    def grad(v):
        alpha, w = v[:e], v[e:]
        r = fd_scores(task.features, FdModel(alpha, w)) - y
        ga = 2 / lam * collapse_spectral(task.features, w) @ r + pa @ (alpha - prior_alpha.mean)
        gw = 2 / lam * collapse_spatial(task.features, alpha).T @ r + pw @ (w - prior_w.mean)
        return np.concatenate([ga, gw])

    return grad


class TestInnerLoop:
    def test_half_steps_monotone(self, rng):
        e, f = 4, 3
        task = make_task(rng, "t", 40, (e, f), rng.standard_normal(e * f))
        pw, pa = random_prior(rng, f), random_prior(rng, e)
        cfg = TrainConfig(lam=0.8, max_inner_iter=50)
        _, trace = fd_inner_loop(task, FdModel(np.ones(e), np.zeros(f)), pw, pa, cfg, return_trace=True)
        diffs = np.diff(trace)
        assert np.all(diffs <= 1e-10 * np.maximum(1.0, np.abs(np.array(trace[:-1]))))

    def test_stationary_at_convergence(self, rng):
        e, f = 3, 4
        task = make_task(rng, "t", 50, (e, f), rng.standard_normal(e * f))
        pw, pa = random_prior(rng, f), random_prior(rng, e)
        cfg = TrainConfig(lam=1.0, inner_tol=1e-12, max_inner_iter=5000)
        model = fd_inner_loop(task, FdModel(np.ones(e), np.zeros(f)), pw, pa, cfg)
        g = _joint_grad(task, pw, pa, 1.0, e)(np.concatenate([model.alpha, model.w]))
        assert np.linalg.norm(g) <= 1e-6 * (1 + np.linalg.norm(np.concatenate([model.alpha, model.w])))

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_multistart_oracle(self, seed):
        rng = np.random.default_rng(seed)
        e, f, lam = 3, 3, 1.0
        task = make_task(rng, "t", 40, (e, f), rng.standard_normal(e * f))
        pw, pa = GaussianPrior.identity(f), GaussianPrior.identity(e)
        cfg = TrainConfig(lam=lam, inner_tol=1e-13, max_inner_iter=10000)
        model = fd_inner_loop(task, FdModel(np.ones(e), np.zeros(f)), pw, pa, cfg)
        obj = _joint_loss(task, pw, pa, lam, e)
        grad = _joint_grad(task, pw, pa, lam, e)
        starts = [rng.standard_normal(e + f) for _ in range(8)]
        candidates = [brute_force_minimize(obj, s, tol=1e-7, grad=grad) for s in starts]
        best = min(candidates, key=obj)
        ours = np.concatenate([model.alpha, model.w])
        assert obj(ours) <= obj(best) + 1e-8 * abs(obj(best))
        np.testing.assert_allclose(np.outer(model.alpha, model.w), np.outer(best[:e], best[e:]), atol=1e-4)

    def test_single_band_reduction(self, rng):
        # with F = 1 and w fixed at 1 the alpha-step is the flat update on the electrode vector
        from mtbci import update_task_weights
        task = make_task(rng, "t", 30, (4, 1), rng.standard_normal(4))
        pa = random_prior(rng, 4)
        X, y = task.features[:, :, 0], task.labels.astype(float)
        expected = update_task_weights(X, y, pa, 0.6)
        from mtbci.core import solve_prior_regression
        Xh = collapse_spectral(task.features, [1.0])
        np.testing.assert_allclose(solve_prior_regression(Xh @ Xh.T, Xh @ y, pa, 0.6), expected, rtol=1e-12)


class TestTrainFd:
    def test_sweeps_do_not_increase_objective(self, small_collection):
        fit = train_multitask_fd(small_collection, TrainConfig(lam=1.0, max_outer_iter=25))
        for before, after in fit.sweep_checks:
            assert after <= before + 1e-10 * max(1.0, abs(before))

    def test_identical_tasks_hold_covariance(self, rng):
        base = make_task(rng, "a", 30, (3, 2), rng.standard_normal(6))
        col = TaskCollection(tuple(TaskDataset(k, base.features, base.labels) for k in "abc"))
        fit = train_multitask_fd(col, TrainConfig(max_outer_iter=4, init_mode="uninformative"))
        assert fit.degenerate_updates == {"w": 4, "alpha": 4}
        np.testing.assert_array_equal(fit.prior_w.covariance, np.eye(2))
        np.testing.assert_array_equal(fit.prior_alpha.covariance, np.eye(3))
        np.testing.assert_allclose(fit.prior_w.mean, fit.task_models[0].w, rtol=1e-14)

    def test_ridge_init_is_order_invariant(self, small_collection):
        reversed_col = TaskCollection(tuple(reversed(small_collection.tasks)))
        a = fd_ridge_init(small_collection, 1.0)
        b = fd_ridge_init(reversed_col, 1.0)
        np.testing.assert_allclose(a, b, rtol=1e-9)

    def test_ridge_init_pools(self, small_collection):
        from mtbci.fd import pooled_dataset
        pooled = pooled_dataset(small_collection)
        assert pooled.n_trials == 120
        direct = fd_inner_loop(pooled, FdModel(np.ones(2), np.zeros(3)), GaussianPrior.identity(3),
                               GaussianPrior.identity(2), TrainConfig(lam=1.0))
        np.testing.assert_array_equal(fd_ridge_init(small_collection, 1.0), direct.alpha)

    @pytest.mark.slow
    @pytest.mark.parametrize("init_mode", ["uninformative", "ridge_init"])
    def test_rank_one_recovery(self, init_mode):
        col, _, alpha_star, w_star = default_fd_scenario(seed=1)
        fit = train_multitask_fd(col, TrainConfig(lam=1.0, init_mode=init_mode))
        got = np.outer(fit.prior_alpha.mean, fit.prior_w.mean).ravel()
        want = np.outer(alpha_star, w_star).ravel()
        # measured about 0.97
        assert abs(got @ want) / (np.linalg.norm(got) * np.linalg.norm(want)) >= 0.9

    def test_json_round_trip(self, small_collection):
        fit = train_multitask_fd(small_collection, TrainConfig(max_outer_iter=3))
        again = FdFit.from_dict(json.loads(fit.to_json()))
        np.testing.assert_array_equal(again.prior_w.covariance, fit.prior_w.covariance)
        np.testing.assert_array_equal(again.prior_alpha.mean, fit.prior_alpha.mean)
        for a, b in zip(again.task_models, fit.task_models):
            np.testing.assert_array_equal(a.w, b.w)
        canon = json.loads(fit.to_json())["canonical"]
        np.testing.assert_allclose(np.outer(canon["alpha"], canon["w"]),
                                   np.outer(fit.prior_alpha.mean, fit.prior_w.mean), rtol=1e-12)
