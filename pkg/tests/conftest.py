import numpy as np
import pytest

from metricrl.datagen import collect
from metricrl.envs import EnvIndex, doorkey_spec, empty_spec, hypermaze_spec, make_env, multigoal_spec


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def central_diff(f, x, h=1e-5):
    """Central finite differences of a scalar function over a flat vector."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


@pytest.fixture(scope="session")
def empty10():
    return EnvIndex.build(make_env(empty_spec(10)))


@pytest.fixture(scope="session")
def empty6():
    return EnvIndex.build(make_env(empty_spec(6)))


@pytest.fixture(scope="session")
def doorkey6():
    return EnvIndex.build(make_env(doorkey_spec(6)))


@pytest.fixture(scope="session")
def maze10():
    return EnvIndex.build(make_env(hypermaze_spec(10, 2)))


@pytest.fixture(scope="session")
def multigoal10():
    return EnvIndex.build(make_env(multigoal_spec(10)))


@pytest.fixture(scope="session")
def small_dataset(empty6):
    return collect(empty6, "low", 60, seed=3)


def toy_dataset(transitions, terminals=()):
    """Dataset from ``(s, s')`` feature pairs; ``terminals`` lists indices of
    transitions that end an episode."""
    from metricrl.datagen import Dataset
    n = len(transitions)
    s = np.array([np.atleast_1d(a) for a, _ in transitions], dtype=np.float64)
    s2 = np.array([np.atleast_1d(b) for _, b in transitions], dtype=np.float64)
    term = np.zeros(n, dtype=bool)
    term[list(terminals)] = True
    r = term.astype(np.float64)
    return Dataset(np.zeros(n, dtype=np.int64), np.arange(n), s, np.zeros(n, dtype=np.int64), r, s2, term)
