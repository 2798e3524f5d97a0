import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import mm1, toy_model
from rarechain import CrossEntropyIS, ZeroVarianceIS, check_measure, check_model
from rarechain.base import check_seed
from rarechain.chain import InvalidModelError, SupportError
from rarechain.io import write_chain
from rarechain.mm1 import Mm1Params


def test_params_roundtrip():
    est = CrossEntropyIS(n_samples=500, max_iter=3)
    assert est.get_params()["n_samples"] == 500
    est.set_params(tol=0.01)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert not hasattr(twin, "measure_")


def test_not_fitted():
    with pytest.raises(NotFittedError):
        CrossEntropyIS().estimate()
    with pytest.raises(NotFittedError):
        ZeroVarianceIS().diagnose()


def test_cross_entropy_fit_estimate():
    model = mm1(10)
    est = CrossEntropyIS(n_samples=2000, n_replications=2000, random_state=5).fit(model)
    assert est.n_iter_ == len(est.trace_) >= 1
    rep = est.estimate()
    assert rep is est.report_ and rep.hits > 0
    d = est.diagnose()
    assert d.rat == rep.rat and 1.0 <= d.rat_exact <= 2.0
    again = clone(est).fit(model).estimate()
    assert again == rep


def test_zero_variance_fit_estimate():
    est = ZeroVarianceIS(n_replications=100)
    rep = est.fit_estimate(Mm1Params(0.8, 1.0, 10))
    assert rep.mean == pytest.approx(est.gamma_.hit_probability, rel=1e-12)
    assert rep.relative_error <= 1e-10
    with pytest.raises(ValueError):
        ZeroVarianceIS(first_step="sideways").fit(mm1(5))


def test_bad_init_and_seed():
    with pytest.raises(ValueError):
        CrossEntropyIS(init="optimal").fit(mm1(5))
    for seed in (-1, 1.5, "3", True, None):
        with pytest.raises(ValueError):
            CrossEntropyIS(random_state=seed).fit(mm1(5))
    assert check_seed(np.int64(3)) == 3


def test_check_model_variants(tmp_path):
    toy = toy_model()
    assert check_model(toy) is toy
    assert check_model(Mm1Params(0.8, 1.0, 5)).n_states == 6
    assert check_model((toy.P, toy.kinds)).n_states == 3
    path = tmp_path / "toy.chain"
    write_chain(path, toy.kinds, toy.P)
    np.testing.assert_array_equal(check_model(str(path)).P, toy.P)
    with pytest.raises(TypeError):
        check_model(42)
    with pytest.raises(InvalidModelError):
        check_model((np.eye(3), [1, 0, 2]))


def test_check_measure():
    model = mm1(4)
    assert check_measure(model, model.P).n_states == 5
    P = model.P.copy()
    P[3] = [0, 0, 1, 0, 0]
    with pytest.raises(SupportError):
        check_measure(model, P)
