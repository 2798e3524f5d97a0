import numpy as np
import pytest

from rarechain import ChangeOfMeasure, Kind, MarkovModel, Mm1Params, build_mm1, random_chain

LAM, MU = 0.8, 1.0


def toy_model(eps=0.01):
    P = np.zeros((3, 3))
    P[0, 1] = 1.0
    P[1, 2] = eps
    P[1, 0] = 1.0 - eps
    P[2, 2] = 1.0
    return MarkovModel(P, [Kind.GOOD, Kind.INTERNAL, Kind.BAD])


def random_corpus(count, max_states=20, seed=2024):
    """Random valid chains with 4..max_states states, varied sparsity and bad-set size."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(4, max_states + 1))
        n_bad = int(rng.integers(1, min(3, n - 2) + 1))
        density = float(rng.uniform(0.1, 0.6))
        out.append(random_chain(n, rng, n_bad=n_bad, density=density))
    return out


def mm1(n):
    return build_mm1(Mm1Params(LAM, MU, n))


@pytest.fixture
def toy():
    return toy_model()


@pytest.fixture
def mm1_5():
    return mm1(5)


@pytest.fixture
def mm1_10():
    return mm1(10)


def nominal(model):
    return ChangeOfMeasure.nominal(model)
