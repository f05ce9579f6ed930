import numpy as np
import pytest

from climb import fit_cooc, generate_synthetic


class AdditiveModel:
    """Target score is exactly ``base + x @ values``; every other item scores 0."""

    def __init__(self, n_items, target, base, values):
        self.n_items = n_items
        self.target = target
        self.base = base
        self.values = np.asarray(values, dtype=float)

    def predict_proba(self, X):
        X = np.atleast_2d(X)
        out = np.zeros((X.shape[0], self.n_items))
        out[:, self.target] = self.base + X @ self.values
        return out


class SaturatingModel:
    """``f(x) = 1 - relu(1 - slope * sum(x))`` for the target: flat once any item is present."""

    def __init__(self, n_items, target, slope=1.0):
        self.n_items = n_items
        self.target = target
        self.slope = slope

    def predict_proba(self, X):
        X = np.atleast_2d(X)
        out = np.zeros((X.shape[0], self.n_items))
        out[:, self.target] = 1.0 - np.maximum(0.0, 1.0 - self.slope * X.sum(axis=1))
        return out


class ConstantModel:
    def __init__(self, n_items, value=0.3):
        self.n_items = n_items
        self.value = value

    def predict_proba(self, X):
        X = np.atleast_2d(X)
        return np.full((X.shape[0], self.n_items), self.value)


class TableGame:
    """Coalition values given as a dict keyed by frozenset of positions into ``active``."""

    def __init__(self, n_items, target, active, table):
        self.n_items = n_items
        self.target = target
        self.active = list(active)
        self.table = table

    def predict_proba(self, X):
        X = np.atleast_2d(X)
        out = np.zeros((X.shape[0], self.n_items))
        for r, row in enumerate(X):
            key = frozenset(j for j, item in enumerate(self.active) if row[item])
            out[r, self.target] = self.table[key]
        return out


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(200, 300, 1.1, 12, 3)


@pytest.fixture(scope="session")
def small_model(small_data):
    return fit_cooc(small_data)


@pytest.fixture(scope="session")
def default_data():
    return generate_synthetic(1000, 2000, 1.1, 20, 7)


@pytest.fixture(scope="session")
def default_model(default_data):
    return fit_cooc(default_data)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
