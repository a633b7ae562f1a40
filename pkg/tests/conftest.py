import numpy as np
import pytest

from mtbci import GaussianPrior, TaskCollection, TaskDataset


def random_spd(rng, d, jitter=0.1):
    A = rng.standard_normal((d, d))
    return A @ A.T / d + jitter * np.eye(d)


def random_prior(rng, d):
    return GaussianPrior(rng.standard_normal(d), random_spd(rng, d))


def make_task(rng, task_id, n, shape, w=None):
    X = rng.standard_normal((n, *shape))
    if w is None:
        labels = np.where(rng.standard_normal(n) >= 0, 1, -1)
    else:
        labels = np.where(X.reshape(n, -1) @ w >= 0, 1, -1)
    return TaskDataset(task_id, X, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_collection(rng):
    w = rng.standard_normal(6)
    return TaskCollection(tuple(make_task(rng, f"t{i}", 30, (2, 3), w + 0.3 * rng.standard_normal(6))
                                for i in range(4)))


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
